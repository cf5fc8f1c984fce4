// SPDX-License-Identifier: Apache-2.0

//! Conservative syntactic dependence tests over affine subscripts.
//!
//! False "dependent" answers are acceptable; false "independent" answers
//! are not. Anything non-affine is treated as dependent.

use std::collections::BTreeSet;

use crate::loop_ir::{Expr, Stmt};

/// Provably-independent test for one access pair along `var`: true when the
/// two accesses can never touch the same element in different iterations.
fn pair_independent(var: &str, a: &[Expr], b: &[Expr]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    for (ea, eb) in a.iter().zip(b.iter()) {
        let (Some((ca, ra)), Some((cb, rb))) = (ea.affine_in(var), eb.affine_in(var)) else {
            continue;
        };
        if ca == cb && ca != 0 {
            if ra == rb {
                // Same stride, same offset: collisions only within one
                // iteration.
                return true;
            }
            if let Some(delta) = Expr::sub(ra.clone(), rb.clone()).const_int() {
                if delta == 0 {
                    return true;
                }
                if delta % ca != 0 {
                    // Offsets land between strides: never equal.
                    return true;
                }
            }
        }
        if ca == 0 && cb == 0 {
            // Fixed elements along this dimension; unequal constants can
            // never collide in any iteration.
            if let (Some(x), Some(y)) = (ra.const_int(), rb.const_int()) {
                if x != y {
                    return true;
                }
            }
        }
    }
    false
}

/// True when iterating `var` over `body` may carry a dependence across
/// iterations: some store conflicts with a store or load of the same buffer
/// at a different iteration.
pub fn has_loop_carried_dependence(var: &str, body: &Stmt) -> bool {
    let stores = body.stores();
    let loads = body.loads();
    for (sb, si) in &stores {
        for (ab, ai) in stores.iter().chain(loads.iter()) {
            if sb != ab {
                continue;
            }
            if !pair_independent(var, si, ai) {
                return true;
            }
        }
    }
    false
}

/// Access-uniformity test used by loop interchange: every access to each
/// stored buffer inside `body` uses one identical index vector, and that
/// vector is injective per interchanged variable (some dimension strides
/// exactly one of the two variables and ignores the other).
pub fn interchange_legal(outer: &str, inner: &str, body: &Stmt) -> bool {
    let stores = body.stores();
    let loads = body.loads();
    let stored: BTreeSet<&str> = stores.iter().map(|(b, _)| *b).collect();
    for buffer in stored {
        let mut vectors: Vec<&[Expr]> = Vec::new();
        for (b, idx) in stores.iter().chain(loads.iter()) {
            if *b == buffer {
                vectors.push(idx);
            }
        }
        let first = vectors[0];
        if !vectors.iter().all(|v| *v == first) {
            return false;
        }
        let strided_by = |var: &str, other: &str| -> bool {
            first.iter().any(|e| {
                !e.mentions_var(other)
                    && matches!(e.affine_in(var), Some((c, _)) if c != 0)
            })
        };
        if !strided_by(outer, inner) || !strided_by(inner, outer) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_ir::{for_loop, seq, Expr, LoopAnnotation, Stmt};

    fn store(buf: &str, idx: Vec<Expr>, value: Expr) -> Stmt {
        Stmt::Store {
            buffer: buf.into(),
            indices: idx,
            value,
        }
    }

    #[test]
    fn elementwise_is_independent() {
        // c[i] = c[i] + a[i]
        let body = store(
            "c",
            vec![Expr::var("i")],
            Expr::add(
                Expr::load("c", vec![Expr::var("i")]),
                Expr::load("a", vec![Expr::var("i")]),
            ),
        );
        assert!(!has_loop_carried_dependence("i", &body));
    }

    #[test]
    fn scan_is_dependent() {
        // b[i] = b[i-1] + 1
        let body = store(
            "b",
            vec![Expr::var("i")],
            Expr::add(
                Expr::load("b", vec![Expr::sub(Expr::var("i"), Expr::IntLit(1))]),
                Expr::IntLit(1),
            ),
        );
        assert!(has_loop_carried_dependence("i", &body));
    }

    #[test]
    fn accumulator_is_dependent_on_reduction_var() {
        // c[j] = c[j] + a[k]  (k is the loop var; c index ignores k)
        let body = store(
            "c",
            vec![Expr::var("j")],
            Expr::add(
                Expr::load("c", vec![Expr::var("j")]),
                Expr::load("a", vec![Expr::var("k")]),
            ),
        );
        assert!(has_loop_carried_dependence("k", &body));
    }

    #[test]
    fn strided_disjoint_is_independent() {
        // b[2i] = b[2i+1] never collides across iterations.
        let body = store(
            "b",
            vec![Expr::mul(Expr::IntLit(2), Expr::var("i"))],
            Expr::load(
                "b",
                vec![Expr::add(
                    Expr::mul(Expr::IntLit(2), Expr::var("i")),
                    Expr::IntLit(1),
                )],
            ),
        );
        assert!(!has_loop_carried_dependence("i", &body));
    }

    #[test]
    fn matmul_interchange_is_legal() {
        // Perfect (i, j) nest around the k reduction.
        let k_body = store(
            "c",
            vec![Expr::var("i"), Expr::var("j")],
            Expr::add(
                Expr::load("c", vec![Expr::var("i"), Expr::var("j")]),
                Expr::mul(
                    Expr::load("a", vec![Expr::var("i"), Expr::var("k")]),
                    Expr::load("b", vec![Expr::var("k"), Expr::var("j")]),
                ),
            ),
        );
        let inner = seq(vec![
            store("c", vec![Expr::var("i"), Expr::var("j")], Expr::Const(crate::tensor::Scalar::F32(0.0))),
            for_loop("k", Expr::IntLit(0), Expr::IntLit(4), LoopAnnotation::Serial, k_body),
        ]);
        assert!(interchange_legal("i", "j", &inner));
    }

    #[test]
    fn colliding_diagonal_interchange_is_illegal() {
        // B[i+j] = i collides across orders.
        let body = store(
            "B",
            vec![Expr::add(Expr::var("i"), Expr::var("j"))],
            Expr::var("i"),
        );
        assert!(!interchange_legal("i", "j", &body));
    }
}
