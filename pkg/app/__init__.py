# GRAIN testbed app package
