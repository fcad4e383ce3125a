//! Synthetic DSA-like guidewire sequences and their on-disk format.

pub mod bbox;
pub mod error;
pub mod geometry;
pub mod io;
pub mod phantom;
pub mod preset;
pub mod results;
pub mod sequence;

pub use bbox::{BBox, DegenerateBox};
pub use error::DataError;
pub use geometry::{ArcPath, Vec2};
pub use image::GrayImage;
pub use io::{read_all, read_dataset, write_dataset};
pub use phantom::{gen_vessel_tree, PhantomSpec, TreeParams};
pub use preset::{generate, generate_one, SynthConfig};
pub use results::{read_results, write_results, TrackRecord};
pub use sequence::{gen_sequence, Annotation, GeneratedSequence, OcclusionBand, SequenceDataset, SequenceMeta, Split};
