# MDCN super-resolution package
