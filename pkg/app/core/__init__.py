# Settings and errors
