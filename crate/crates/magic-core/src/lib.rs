//! Monte Carlo estimation of stabilizer Rényi entropies ("magic") of
//! many-body ground states.
//!
//! The crate samples Pauli strings with Metropolis Markov chains against
//! distributions built from squared string expectations, evaluated either on
//! an exact dense statevector or on a tree tensor network whose cached link
//! operators give `O(log N)` incremental updates per proposed move. On top
//! of the chains sit estimators for full-state, mixed-state, long-range, and
//! subleading magic, an exhaustive-enumeration oracle for ground truth,
//! autocorrelation-aware error analysis with finite-size-scaling collapse,
//! and a simulated finite-shot measurement mode.

pub mod analysis;
pub mod dense;
pub mod duality;
pub mod error;
pub mod expsim;
pub mod fss;
pub mod lattice;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod pauli;
pub mod sampler;
pub mod ttn;

pub use dense::{ground_state, DenseState, GroundStateOptions};
pub use error::{MagicError, Result};
pub use models::{build_hamiltonian, symmetry_of, HamiltonianTerms, ModelFamily, ModelSpec};
pub use pauli::{propose_move, MoveProposal, PauliString, SymmetrySector};
