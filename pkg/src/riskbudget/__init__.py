"""Risk-budgeted receding-horizon speed planning with verifiable risk bounds."""

__version__ = "0.1.0"

from .beliefs import (AgentPattern, EgoBelief, StoppedBeliefSet, WorldBelief,
                      WorldModel, WorldObservation, bayes_update,
                      open_loop_update, pcl_update)
from .controllers import (CONTROLLER_KINDS, IRB, EpisodeTrace, RiskLedger,
                          run_episode)
from .discrete import (DiscreteCCPOMDP, exact_policy_risk, racetrack_model,
                       umdp_transform_check)
from .lattice import LatticeSpec, SpeedPlan, expand_graph, solve_chance_constrained
from .montecarlo import run_monte_carlo, wilson_interval
from .risk import (CollisionModel, Disk, DiskCover, collision_probability,
                   cover_footprint, disk_collision_bound, stop_belief,
                   stop_collision_bound)
from .scenarios import GroundTruth, Scenario, builtin_scenarios, sample_ground_truth
from .vehicle import (EgoKinematicState, FootprintSpec, ReferencePath,
                      StopParams, advance_on_path, emergency_stop_controls)
