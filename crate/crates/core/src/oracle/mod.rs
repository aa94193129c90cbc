//! Exact cardinalities of conjunctive select-join queries.
//!
//! The executor is a brute-force reference: filtered scans, then a
//! left-deep join in catalog order using hash joins for equality links and
//! nested loops for everything else. Counts are taken over the full join
//! result; projections never change a cardinality, so queries carry none.

mod exec;
mod query;

pub use exec::{execute, execute_batch, execute_with, JoinStrategy};
pub use query::{CmpOp, Filter, JoinCondition, Query, QueryRecord, Selection};
