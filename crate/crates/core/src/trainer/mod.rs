//! Session lifecycle: configuration, base and incremental training with the
//! freeze policy, checkpoints, the full protocol and experiment harnesses.

pub mod checkpoint;
pub mod config;
pub mod harness;
pub mod protocol;
pub mod session;

pub use checkpoint::{Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{load_config, parse_config, RunConfig, UpdateScope};
pub use protocol::{checkpoint_path, drive, run_protocol, DataBundle, Runner};
pub use session::{
    evaluate, learnable_mask, train_base_session, train_incremental_session, train_session, verify_frozen,
    SessionData, SessionParams, SessionState,
};
pub use harness::{
    ablate_hparam, ablate_scope, render_hparam_table, render_scope_table, render_seed_table, seed_variance,
    HparamAxis, HparamRow, ScopeRow, SeedRun, SeedVariance,
};
