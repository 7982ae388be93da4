"""Throughput models for closed peer-to-peer swarms.

Exact Markov chain (with block-relabeling lumping), a queueing-network
approximation of the saturated regime, and an event-driven simulator that
shares its transition rates with the exact chain.
"""
__version__ = "0.1.0"

from .core import (
    ModelParams,
    PeerPolicy,
    PublisherPolicy,
    ReplicaProfile,
    Signature,
    SwarmState,
    count_states,
    enumerate_lumped_states,
    enumerate_states,
    lump_state,
    replica_profile,
)
from .errors import (
    AxisMismatch,
    DegenerateRates,
    EnumerationLimitExceeded,
    InvalidParams,
    InvalidTransition,
    NotConverged,
    ReducibleChain,
    SpecError,
    SwarmError,
    Unstable,
)
from .markov import (
    GeneratorMatrix,
    PopulationCurve,
    StationaryDistribution,
    build_generator,
    exact_throughput,
    peer_rate,
    publisher_rate,
    solve_stationary,
    sweep_population,
    throughput,
)
from .queueing import QueueNetworkSolution, fixed_point, proposition1_bound, psi, solve_birth_death
from .sim import (
    InitialCondition,
    SimConfig,
    ThroughputEstimate,
    TransientResult,
    estimate_throughput,
    simulate,
    transient_time_to_leave_one_club,
    transient_time_to_one_club,
)
