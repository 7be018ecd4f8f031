//! Collaboration core for 360° video AR/VR telepresence.
//!
//! The crate is split by concern:
//!
//! * [`geometry`]: transforms, anchor alignment, fisheye projection, stereo rig.
//! * [`mesh`]: triangle meshes, ray casting, selection frusta and colored OBJ.
//! * [`protocol`]: the unreliable pointer datagram and reliable framed messages.
//! * [`session`]: the per-peer replicated state machine.
//! * [`replica`]: RGBD capture → plane segmentation → TSDF → colored mesh.
//! * [`sim`]: a deterministic two-peer network simulator and scenario runner.

pub mod geometry;
pub mod mesh;
pub mod protocol;
pub mod replica;
pub mod session;
pub mod sim;
