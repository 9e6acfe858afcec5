# Correlation statistics, detection decisions and clustering
