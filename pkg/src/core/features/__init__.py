# Random-projection feature extraction
