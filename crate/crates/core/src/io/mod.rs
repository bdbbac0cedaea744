//! Readers and writers for panels, weights and report artifacts.

pub mod divorce;
pub mod format;
pub mod table;

pub use divorce::{load_divorce, load_divorce_reader, DIVORCE_ENV, DIVORCE_RAW_ROWS};
pub use format::{fmt_num, to_json_string, to_json_value_string};
pub use table::{
    read_panel, read_panel_path, read_weights, write_classification, write_panel, write_curve, write_weights, CsvSchema,
};
