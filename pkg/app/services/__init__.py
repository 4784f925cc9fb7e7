# Numeric engine, training, evaluation and serving
