//! CMAPSS-format data: parsing, channel selection, scaling, windows, labels and splits.

pub mod archive;
pub mod cmapss;
pub mod preprocess;
pub mod synthetic;
pub mod window;

pub use archive::{prepare, read_subset_dir, DatasetConfig, LabeledFrames, PreparedDataset, DATASET_SCHEMA_VERSION};
pub use cmapss::{parse_cmapss, parse_rul, write_cmapss, EngineSeries, Role, SeriesSet, Subset};
pub use preprocess::{
    piecewise_rul_labels, select_channels, split_validation, truncated_rul_labels, Scaler, RUL_MAX, SENSOR_CHANNELS,
};
pub use window::{batch_input, batch_ranges, frame_refs, make_windows, Frame, FrameRef};
