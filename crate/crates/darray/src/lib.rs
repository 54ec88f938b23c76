//! Cluster-distributable n-dimensional arrays with a global-view interface.
//!
//! The central type is [`DArray`]: an n-dimensional numerical array whose
//! data is split across the ranks of a cluster according to a
//! [`Strategy`], while the user-facing API stays global — indexing,
//! arithmetic and reductions are written exactly as for a local array. The
//! per-rank shard remains directly accessible for specialized code paths.
//!
//! Everything runs on a deterministic in-process [`SimulatedCluster`], so
//! distributed programs can be developed and tested on one machine:
//!
//! ```
//! use darray::{run_cluster, ArrayContext, LocalTensor};
//!
//! let results = run_cluster(4, |comm| {
//!     let ctx = ArrayContext::new(&comm);
//!     let obj = ctx.from_global(LocalTensor::arange(16).reshape(&[4, 4])?)?;
//!     let doubled = obj.add(&obj)?;
//!     doubled.sum()
//! })?;
//! // 2 * (0 + 1 + ... + 15), on every rank
//! assert_eq!(results[0].as_i64()?, 240);
//! # Ok::<(), darray::Error>(())
//! ```

pub mod darray;
pub mod distributor;
pub mod error;
pub mod librarian;
pub mod tensor;
pub mod transport;

pub use crate::darray::{ArrayContext, DArray, EwOperand, Extracted, InitSpec, LocalKey, UpdateSource};
pub use crate::distributor::{Distributor, DistributorFactory, Layout, Localized, Strategy};
pub use crate::error::{DeadlockError, Error, Result};
pub use crate::librarian::Librarian;
pub use crate::tensor::{
    BinaryOp, Complex64, DType, Key, LocalTensor, ReduceOp, Scalar, SetValue, SliceSpec, UnaryOp,
};
pub use crate::transport::{
    run_cluster, Comm, Counters, RankId, SimulatedCluster, Wire, DEFAULT_DEADLOCK_TIMEOUT,
};

#[cfg(doctest)]
mod book {
    //! Keeps the guide's code samples compiling and passing; each chapter of
    //! `book/` is attached here so its fenced Rust blocks run as doc-tests.
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(GettingStarted, "../../../book/src/getting-started.md");
    chapter!(Strategies, "../../../book/src/distribution-strategies.md");
    chapter!(Indexing, "../../../book/src/global-view-indexing.md");
    chapter!(Communication, "../../../book/src/communication.md");
    chapter!(Registry, "../../../book/src/registry.md");
    chapter!(Formats, "../../../book/src/file-formats.md");
}
