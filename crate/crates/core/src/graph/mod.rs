//! Feature-correlation graphs and the graph operators of the classifier.

mod cheb;
mod coarsen;
mod io;
mod laplacian;

pub use cheb::{chebyshev_conv, graph_max_pool};
pub use coarsen::{coarsen_adjacency, graclus_coarsen, match_level, GraphHierarchy, Matching};
pub use io::{read_matrix_csv, write_matrix_csv};
pub use laplacian::{
    adjacency_from_pearson, dense_lambda_max, estimate_lambda_max, normalized_laplacian, pearson_matrix,
    power_iteration, scale_laplacian, CorrelationGraph, NORMALIZED_BOUND, POWER_MAX_ITERS, POWER_TOLERANCE,
};
