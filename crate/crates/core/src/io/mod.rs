//! Configuration, synthetic phantoms, reference data and file formats.

mod checkpoint;
mod config;
mod files;
mod phantom;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{load_case, parse_case, Case, QuadratureName};
pub use files::{
    decode_field, encode_field, format_history, format_record, parse_record, read_field, read_record, write_field,
    write_field_text, write_history, write_record, write_timing, write_vtk,
};
pub use phantom::{build_phantom, make_reference_data, PhantomSpec, VoidShape};
