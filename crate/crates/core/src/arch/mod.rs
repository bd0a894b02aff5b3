//! Architecture descriptions and the networks built from them.

pub mod blocks;
pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod spec;

pub use blocks::{Block, BlockPosition, Bottleneck, InceptionModule, SeUnit};
pub use layers::{ForceGate, GateHook, Mode, NoHook, ParamStore};
pub use network::{build_network, ForwardPass, Network};
pub use spec::{preset, preset_names, preset_text, ArchSpec, IntegrationVariant, SeSettings, StageSpec};
