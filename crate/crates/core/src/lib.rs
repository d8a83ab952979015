#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atoms;
pub mod diagnostics;
pub mod engine;
pub mod linops;
pub mod primal_dual;
pub mod problem_file;
pub mod problems;
pub mod report;
pub mod session;
pub mod validity;
pub mod variants;
