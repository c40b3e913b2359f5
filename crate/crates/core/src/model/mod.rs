//! Network definitions built on [`crate::autodiff`].

mod checkpoint;
mod dqn;
mod sdl;
mod shapes;
mod trunk;

pub(crate) use checkpoint::load_groups;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, read_checkpoint_groups, write_checkpoint, CheckpointGroup,
    CHECKPOINT_VERSION, DQN_MAGIC, ENCODER_MAGIC, SDL_MAGIC,
};
pub use dqn::{dqn_forward, DqnNetwork, NUM_ACTIONS};
pub use sdl::{decide, sdl_forward, SdlNetwork};
pub use shapes::{derive_conv_shapes, ConvShapes};
pub use trunk::{volume_batch, NetworkConfig};
