//! Large-system MSE and SER predictions from the replica fixed point, with
//! closed forms for Rayleigh channels and QPSK or Gaussian data.

mod fixed_point;
mod scalar;

pub use fixed_point::{
    fixed_point_residual, replica_dual, replica_fixed_point, DualOutcome, ReplicaInit, ReplicaMode,
    ReplicaOptions, ReplicaOutcome, ReplicaParams, ReplicaState, DENOM_FLOOR,
};
pub use scalar::{
    gauss_hermite, qfunc, scalar_mmse_gaussian, scalar_mmse_qpsk, ser_asymptotic, GH_NODES,
};

/// `(q_cp, q_cd) = (ρ K q_f q_xp, ρ K q_f q_xd)`.
pub fn second_moments(params: &ReplicaParams) -> (f64, f64) {
    params.second_moments()
}
