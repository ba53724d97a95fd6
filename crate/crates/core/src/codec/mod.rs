//! Conversion between images and normalized DCT feature maps.

pub mod dct;
pub mod image;
pub mod maps;
pub mod resize;
pub mod stats;

pub use self::dct::{
    blocks_to_plane, forward_dct_block, inverse_dct_block, plane_to_blocks, BlockGrid, DctBlock, PixelBlock,
    BLOCK_SIZE,
};
pub use self::image::{rgb_to_ycc, ycc_to_rgb, Image, Plane, YccImage, LEVEL_SHIFT, TIE_SLACK};
pub use self::maps::{maps_to_blocks, reform_to_maps, FreqMaps, RegionSpec, DEFAULT_REGION};
pub use self::resize::{bicubic_resize, resize_image, Factor};
pub use self::stats::{compute_channel_stats, denormalize, normalize, ChannelStats, STD_FLOOR};
