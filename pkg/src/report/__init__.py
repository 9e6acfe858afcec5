# Report files and images
