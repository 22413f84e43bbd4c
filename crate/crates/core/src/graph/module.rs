use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamId};

use super::{DynamicGraphGenerator, GraphSet, ModuleKind};

/// `out[.., i] = Σ_j graph[i, j] · x[.., j]` along the joint axis of
/// `x[B, C, T, V]`. `graph` is either `V×V` or per-sample `B×V×V`.
pub fn propagate(tape: &mut Tape, x: Var, graph: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let gs = tape.shape(graph).to_vec();
    if xs.len() != 4 {
        return Err(Error::dim(format!("propagate expects [B, C, T, V], got {xs:?}")));
    }
    let (b, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
    let out = match gs.as_slice() {
        [gv, gw] if *gv == v && *gw == v => {
            let flat = tape.reshape(x, &[b * c * t, v])?;
            tape.matmul_ex(flat, graph, false, true)?
        }
        [gb, gv, gw] if *gb == b && *gv == v && *gw == v => {
            let flat = tape.reshape(x, &[b, c * t, v])?;
            tape.matmul_ex(flat, graph, false, true)?
        }
        _ => {
            return Err(Error::dim(format!(
                "graph {gs:?} does not match features {xs:?}"
            )))
        }
    };
    tape.reshape(out, &[b, c, t, v])
}

/// One function module: propagate `x` over the module's graph, then
/// project channels with the 1×1 weight `theta[C_out, C_in, 1, 1]`.
pub fn apply_module(
    b: &mut Binder,
    kind: ModuleKind,
    x: Var,
    graphs: &GraphSet,
    generator: Option<&DynamicGraphGenerator>,
    theta: ParamId,
) -> Result<Var> {
    let graph = match (kind.dynamic_mode(), graphs.fixed_graph(kind)) {
        (None, Some(g)) => b.tape.constant(g.clone()),
        (Some(mode), _) => {
            let generator = generator.ok_or_else(|| {
                Error::Config(format!("module {kind} needs a dynamic graph generator"))
            })?;
            if generator.mode() != mode {
                return Err(Error::Config(format!(
                    "module {kind} given a {:?} generator",
                    generator.mode()
                )));
            }
            generator.forward(b, x)?
        }
        (None, None) => unreachable!("every fixed module has a graph"),
    };
    let mixed = propagate(&mut b.tape, x, graph)?;
    let w = b.var(theta);
    b.tape.conv2d(mixed, w, 1, 0)
}
