"""shotsort: data-driven sorting of noisy detector traces into dynamics classes."""

from .cluster import (Partition, SilhouetteReport, agglomerate, cluster_model,
                      select_num_clusters, silhouette)
from .content import (ContentRanking, PhotonCalibration,
                      calibrate_photon_number, estimate_photons, rank_shots,
                      signal_content)
from .dataset import (ShotSet, blind_labels, export_curves, read_bundle,
                      unblind_labels, write_bundle)
from .distance import (DistanceMatrix, Roi, distance_matrix, poisson_nll,
                       sym_distance)
from .errors import (BundleFormatError, CalibrationRangeError,
                     DegenerateClassError, InvalidParameterError,
                     ShotSortError)
from .pipeline import (AnalysisParams, QualityMap, SortResult, build_models,
                       class_average, consistency_test,
                       evaluate_against_labels, fit_scale,
                       optimize_parameters, smooth_quality_map, sort_shots,
                       stability_analysis)
from .simulate import (ClassIntensity, SimConfig, default_scenario,
                       draw_photon_count, generate_experiment, intensity,
                       sample_shot, true_photon_counts)
from .traces import (DetectorKernel, TimeAxis, Trace, UncertaintyBand,
                     detector_kernel, photon_equivalents, poisson_band)

__version__ = "0.1.0"
