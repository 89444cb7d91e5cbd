//! Manifests, GPS correspondence between dark and daytime records, and file
//! codecs.

pub mod codec;
mod gps;
mod manifest;

pub use codec::{
    decode_dpt, decode_label_png, decode_mask_png, decode_spm, encode_dpt, encode_label_png,
    encode_mask_png, encode_spm, parse_matches, read_dpt, read_label_png, read_mask_png,
    read_match_file, read_rgb, read_spm, write_dpt, write_label_png, write_mask_png,
    write_match_file, write_spm,
};
pub use gps::{gps_nearest_correspondence, haversine_m, Correspondence, CorrespondenceTable, EARTH_RADIUS_M};
pub use manifest::{
    parse_manifest, parse_manifest_str, write_manifest, GpsPosition, ManifestRecord, RecordPaths,
    Role,
};
