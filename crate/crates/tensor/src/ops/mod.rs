pub mod activation;
pub mod broadcast;
pub mod conv;
pub mod kernels;
pub mod matmul;
pub mod norm;
pub mod shuffle;
pub mod softmax;
