"""Full-scale reference figures that the desk-scale runs are read against.

They are documentation only: nothing in the package trains on the original
clinical datasets, and no test asserts a desk-scale run reproduces them.
"""

# sample counts of the three original segmentation-assisted diagnosis datasets
REFERENCE_DATASET_SIZES = {"REFUGE-2": 1200, "TNMIX": 8046, "ISIC": 1600}

# glaucoma AUC (%) of the four ablation rows, vanilla -> full model
REFERENCE_ABLATION_AUC = (77.29, 79.85, 83.38, 88.47)
