"""coagulab: exact cluster-coagulation simulation and gelation analysis."""

from .core import (ClusterType, Configuration, LabelSet, TimeConvention,
                   TimeMode, apply_coagulation, mass_above,
                   mono_dispersed_clusters, total_mass)
from .kernels import (Domination, KernelSpec, Placement, additive, bilinear,
                      classical, concave_rho, constant, homogeneous_power,
                      mass_log, max_norm_complement_rho, multiplicative,
                      product_kernel, spatial_distance_power)
from .simulator import (ClusterFloorStop, Event, EventCountStop, HorizonStop,
                        PredicateStop, StopCondition, Trajectory,
                        derive_stream_key, run, step, stream)
from .gelation import (CriterionReport, DyadicSpectrum, GelationRule,
                       cascade_times, check_pair_count_bound,
                       classical_criterion_diagnostic, effective_mass_cutoff,
                       gel_fraction_time, giant_cluster_time,
                       hypercube_partition, largest_mass_at,
                       partition_criterion_diagnostic, rate_mass_integral,
                       stop_on_gel_fraction, stop_on_giant_cluster)
from .graphcoupling import (CouplingResult, CouplingState, GraphState,
                            UnionFind, coupled_run, domination_check,
                            graph_component_sizes_at, operator_norm,
                            sample_graph_at)
from .cli import EnsembleResult, Scenario, emit, load_scenario, run_scenario

__version__ = "0.1.0"
