//! Solves a `.dat-s` file with the embedded solver and validates the result.
//!
//!     cargo run --release --example solve_sdpa -- problem.dat-s

use nflsos_core::sdp::{read_sdpa, solve, validate, SolverOptions};

fn main() {
    env_logger::init();
    let path = std::env::args().nth(1).expect("usage: solve_sdpa <file.dat-s>");
    let text = std::fs::read_to_string(&path).expect("readable file");
    let problem = read_sdpa(&text).expect("valid SDPA file");
    let opts = SolverOptions::default();
    let sol = solve(&problem, &opts);
    println!("status {} after {} iterations", sol.status, sol.iterations);
    println!("objective {} / {}", sol.primal_objective, sol.dual_objective);
    println!("{:?}", validate(&problem, &sol, &opts));
}
