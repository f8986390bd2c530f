//! Prints the closed-form worst-case blocking times of every table column.

use promise_lease::analysis::sweep::{nonblocking_read_columns, read_speedup_columns};
use promise_lease::analysis::{theoretical_bound, BoundQuery, OpClass, Period};

fn main() {
    let (delta, delta_star) = (12, 2);
    for epsilon in [0, 3] {
        println!("delta={delta} delta*={delta_star} epsilon={epsilon}");
        let mut columns = read_speedup_columns(delta, delta_star);
        columns.extend(
            nonblocking_read_columns(delta, delta_star)
                .into_iter()
                .skip(1),
        );
        for c in columns {
            let cell = |period, op| {
                let q = BoundQuery {
                    algorithm: c.cell.algorithm,
                    period,
                    op,
                    alpha: c.cell.alpha,
                    beta: c.cell.beta,
                    delta,
                    delta_star,
                    epsilon,
                    strict: true,
                };
                theoretical_bound(&q).map_or_else(|e| format!("({e})"), |b| b.to_string())
            };
            println!(
                "  {:<28} stable rmw {:>3} read {:>3} | nice rmw {:>3} read {:>3}",
                c.name,
                cell(Period::Stable, OpClass::Rmw),
                cell(Period::Stable, OpClass::Read),
                cell(Period::Nice, OpClass::Rmw),
                cell(Period::Nice, OpClass::Read)
            );
        }
    }
}
