//! Lévy measures, triplets and path simulation with explicit jump records.

mod measure;
mod path;

pub use measure::{Atom, LevyMeasure, MeasureKind};
pub use path::{
    jump_counting, simulate_path, CadlagPath, Event, EventKind, History, Jump, LevyPath, LevyTriplet,
    TimeGrid,
};
