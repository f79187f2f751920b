"""
Command-line stages of the locintent pipeline
"""
