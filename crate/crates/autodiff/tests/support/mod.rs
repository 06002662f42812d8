pub mod finite_diff;
