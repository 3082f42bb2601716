//! Simulation and stability analysis of radially coupled solid-state-transformer
//! (SST) microgrids with battery storage.
//!
//! Each SST is a three-stage converter: an active rectifier regulating a
//! medium-voltage DC bus, a dual-active-bridge (DAB) stage feeding a
//! low-voltage DC bus, and a bidirectional storage converter whose duty is
//! set by a feedback-linearizing tracking controller. SSTs couple through a
//! radial feeder; when a storage current reference exceeds its capacity the
//! network re-dispatches setpoints with one of two sharing methods
//! (constant-current or constant-voltage).
//!
//! The library is the primary interface. Start with the runnable examples:
//!
//! | capability | example |
//! |---|---|
//! | exponential storage-current tracking | `cargo run --example tracking_decay` |
//! | duty ↔ phase-shift inversion | `cargo run --example phase_inversion` |
//! | input-voltage comparison envelopes | `cargo run --example vin_envelope` |
//! | equilibrium + eigenvalue analysis | `cargo run --example eigen_analysis` |
//! | power-sharing methods, before/after | `cargo run --example power_sharing` |
//! | delayed setpoint actuation transient | `cargo run --example delay_transient` |
//! | full vs fundamental-mode bus ripple | `cargo run --example ripple_modes` |
//!
//! A thin CLI (`sstnet run|analyze|sweep|validate`) wraps the same entry
//! points for scenario files; see [`cli`] and the bundled presets under
//! `presets/`.
//!
//! Module map:
//! - [`netmodel`]: feeder topology, coupling voltages, parameter and setpoint types
//! - [`dynamics`]: converter right-hand sides and duty/phase-shift laws
//! - [`controller`]: storage reference pipeline and feedback-linearizing duty law
//! - [`powershare`]: saturation detection and the two sharing methods
//! - [`stability`]: equilibria, linearization, eigenvalues, input-voltage envelopes
//! - [`simengine`]: fixed-step RK4 engine, events, trajectories
//! - [`scenario`]: scenario file schema (TOML or JSON), validation, bundled presets
//! - [`report`]: run summaries, setpoint-change logs, plot-script emission
//! - [`cli`]: subcommand implementations used by the `sstnet` binary

pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod netmodel;
pub mod powershare;
pub mod report;
pub mod scenario;
pub mod simengine;
pub mod stability;

pub use netmodel::{CouplingMode, DesdParams, FeederTopology, LineImpedance, SetpointSet, SstParams};
