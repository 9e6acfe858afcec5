# Synthetic model zoo generation
