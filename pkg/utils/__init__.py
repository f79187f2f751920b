# Utilities package

