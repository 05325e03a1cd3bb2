pub mod cli;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod train;
