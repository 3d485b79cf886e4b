//! Run the finite-difference gradient suite for one module or all of them.
//!
//! cargo run --example gradcheck -- [MODULE]

use ialgca::gradsuite::run_suite;

fn main() -> ialgca::Result<()> {
    let module = std::env::args().nth(1);
    for r in run_suite(module.as_deref(), 0)? {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<18}{:<22}{:>12.3e}  {status}", r.module, r.name, r.max_rel_error);
    }
    Ok(())
}
