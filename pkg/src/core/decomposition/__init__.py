# PCA, IVA-G and PARAFAC2 decompositions
