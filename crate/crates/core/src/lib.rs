//! Rate computations for computing a function of distributed sources over a
//! rooted directed tree.

pub mod chargraph;
pub mod dist;
pub mod entropy;
pub mod error;
pub mod io;
pub mod model;
pub mod protocol;
pub mod random;
pub mod region;

pub use dist::{Coord, Joint, Prob};
pub use error::{Error, Result, TreeViolation};
pub use io::{parse_instance, read_instance};
pub use model::{Cut, CutInfo, FunctionTable, Instance, NodeId, Ordering, RootedTree, SourceModel};
pub use region::{AuxFamily, RateReport, RegionOptions};
