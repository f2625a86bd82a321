//! Variational tools for the weak-force N-body problem: the strong-force
//! regularized action, its critical points and Morse indices, the eps -> 0
//! continuation, collision analysis of the limits, and the limiting
//! central-force problems.

pub mod action;
pub mod banded;
pub mod collision;
pub mod critical;
pub mod error;
pub mod limitprob;
pub mod ode;
pub mod path;
pub mod spectral;
pub mod system;

pub use action::{action_gradient, action_hessian_form, action_value, assemble_hessian, h1_gram, residual_h1dual, ActionValue};
pub use banded::{BlockTridiag, Inertia};
pub use collision::{
    audit_generalized_solution, blow_up, collision_direction, detect_collisions, AuditReport, BlowUpProfile, CollisionEvent, LambdaFit, Side,
    ThresholdRule,
};
pub use critical::{
    continuation, minimize, mountain_pass, newton_refine, solve_critical, verify_index_bound, ContinuationOptions, CriticalPointRecord, SeedStrategy,
    SolveMode, SolverOptions, WeakCriticalSequence,
};
pub use error::{Error, Result};
pub use limitprob::{index_i, index_i_lambda, IndexReport, LimitOrbit};
pub use path::{make_path, min_pair_separation, DiscretePath, PathInit, PathVariation, Separation, TimeGrid};
pub use spectral::{morse_index, SpectralReport};
pub use system::{ClusterIndex, Configuration, MassSystem};
