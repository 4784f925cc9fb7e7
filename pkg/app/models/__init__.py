# Config, report and API schemas
