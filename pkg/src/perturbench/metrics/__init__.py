from .consistency import (ConsistencyResult, avg_cosine, consistency_test,
                          group_avg_cosine, select_null_perturbations)
from .mixing import IlisiResult, KernelNeighborhood, calibrate_beta, ilisi
from .recall import (PerturbationMap, aggregate_perturbations,
                     known_relationship_recall, predicted_links, recall_against_db)
from .reconstruction import (DecoderHyper, DecoderModel, StructuralIntegrityResult,
                             spearman_score, structural_integrity, train_decoder)
from .separability import (ProbeHyper, ProbeModel, knn_accuracy, topk_accuracy,
                           train_linear_probe)

__all__ = [
    "ConsistencyResult", "avg_cosine", "consistency_test", "group_avg_cosine",
    "select_null_perturbations",
    "IlisiResult", "KernelNeighborhood", "calibrate_beta", "ilisi",
    "PerturbationMap", "aggregate_perturbations", "known_relationship_recall",
    "predicted_links", "recall_against_db",
    "DecoderHyper", "DecoderModel", "StructuralIntegrityResult", "spearman_score",
    "structural_integrity", "train_decoder",
    "ProbeHyper", "ProbeModel", "knn_accuracy", "topk_accuracy", "train_linear_probe",
]
