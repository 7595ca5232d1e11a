use super::ops::OpKind;
use super::tape::{NodeId, Tape, Var};
use super::{Result, Tensor, TensorError};

/// Gradients of a scalar output with respect to a list of nodes.
///
/// Entries follow the order of the `wrt` slice passed to [`Tape::grad`]. Nodes
/// the output does not depend on (or that are detached) get zero tensors.
#[derive(Debug)]
pub struct GradMap<'t> {
    ids: Vec<NodeId>,
    values: Vec<Tensor>,
    vars: Option<Vec<Var<'t>>>,
}

impl<'t> GradMap<'t> {
    fn position(&self, v: Var<'_>) -> Option<usize> {
        self.ids.iter().position(|&id| id == v.id())
    }

    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.position(v).map(|i| &self.values[i])
    }

    /// The gradient as a node on the tape. Only present for `create_graph`.
    pub fn var(&self, v: Var<'_>) -> Option<Var<'t>> {
        let i = self.position(v)?;
        self.vars.as_ref().map(|vs| vs[i])
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Tensor> {
        self.values
    }

    pub fn vars(&self) -> Option<&[Var<'t>]> {
        self.vars.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Tape {
    /// Reverse-mode derivatives of the scalar `output` with respect to `wrt`.
    ///
    /// The backward computation is recorded as ordinary nodes. With
    /// `create_graph` those nodes stay on the tape and the returned gradients
    /// can be differentiated again; without it the tape is truncated back to
    /// its previous length once the values are read out.
    pub fn grad<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Result<GradMap<'t>> {
        self.check(output)?;
        for v in wrt {
            self.check(*v)?;
        }
        let (shape, n) = {
            let nodes = self.nodes.borrow();
            (nodes[output.id].value.shape().to_vec(), output.id + 1)
        };
        if shape != [1, 1] {
            return Err(TensorError::NonScalar { shape });
        }
        let start_len = self.len();

        let mut is_target = vec![false; n];
        for v in wrt {
            if v.id < n {
                is_target[v.id] = true;
            }
        }
        // reach[i]: gradient can flow from node i back to some target.
        let reach: Vec<bool> = {
            let nodes = self.nodes.borrow();
            let mut reach = vec![false; n];
            for i in 0..n {
                let node = &nodes[i];
                reach[i] = !node.detached
                    && (is_target[i] || node.parents.iter().any(|&p| reach[p]));
            }
            reach
        };

        let mut found: Vec<Option<Var<'t>>> = vec![None; n];
        if reach[output.id] {
            let mut acc: Vec<Option<Var<'t>>> = vec![None; n];
            acc[output.id] = Some(self.scalar(1.0));
            for i in (0..n).rev() {
                if !reach[i] {
                    continue;
                }
                let Some(g) = acc[i].take() else { continue };
                if is_target[i] {
                    found[i] = Some(g);
                }
                let (op, parents) = {
                    let nodes = self.nodes.borrow();
                    (nodes[i].op.clone(), nodes[i].parents.clone())
                };
                if parents.is_empty() {
                    continue;
                }
                let need: Vec<bool> = parents.iter().map(|&p| reach[p]).collect();
                let pgrads = vjp(self, &op, &parents, i, g, &need)?;
                for ((&p, pg), needed) in parents.iter().zip(pgrads).zip(&need) {
                    if !needed {
                        continue;
                    }
                    let Some(pg) = pg else { continue };
                    acc[p] = Some(match acc[p] {
                        Some(prev) => prev.add(pg)?,
                        None => pg,
                    });
                }
            }
        }

        let mut values = Vec::with_capacity(wrt.len());
        let mut vars = Vec::with_capacity(wrt.len());
        for v in wrt {
            let g = if v.id < n { found[v.id] } else { None };
            match g {
                Some(g) => {
                    values.push(g.to_tensor());
                    vars.push(Some(g));
                }
                None => {
                    let (r, c) = v.shape();
                    values.push(Tensor::zeros(r, c));
                    vars.push(None);
                }
            }
        }
        let vars = if create_graph {
            Some(
                vars.into_iter()
                    .zip(&values)
                    .map(|(g, val)| g.unwrap_or_else(|| self.constant(val.clone())))
                    .collect(),
            )
        } else {
            self.truncate(start_len);
            None
        };
        Ok(GradMap {
            ids: wrt.iter().map(|v| v.id).collect(),
            values,
            vars,
        })
    }
}

fn shape_of(tape: &Tape, id: NodeId) -> (usize, usize) {
    tape.nodes.borrow()[id].value.dims2()
}

/// Sum a broadcast gradient back down to `shape`.
fn sum_to<'t>(g: Var<'t>, shape: (usize, usize)) -> Result<Var<'t>> {
    let (gr, gc) = g.shape();
    let mut g = g;
    if shape.0 == 1 && gr != 1 {
        g = g.sum_axis(0)?;
    }
    if shape.1 == 1 && gc != 1 {
        g = g.sum_axis(1)?;
    }
    Ok(g)
}

fn mask<'t>(tape: &'t Tape, id: NodeId, f: impl Fn(f64) -> f64) -> Var<'t> {
    let m = tape.nodes.borrow()[id].value.map(f);
    tape.constant(m)
}

/// Vector-Jacobian products for one node, expressed as tape operations.
fn vjp<'t>(
    tape: &'t Tape,
    op: &OpKind,
    parents: &[NodeId],
    out: NodeId,
    g: Var<'t>,
    need: &[bool],
) -> Result<Vec<Option<Var<'t>>>> {
    let p = |k: usize| tape.var_at(parents[k]);
    let y = tape.var_at(out);
    let one = |v: Result<Var<'t>>| -> Result<Vec<Option<Var<'t>>>> { Ok(vec![Some(v?)]) };
    match op {
        OpKind::Leaf => Ok(Vec::new()),
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let (sa, sb) = (shape_of(tape, parents[0]), shape_of(tape, parents[1]));
            let ga = if need[0] {
                Some(match op {
                    OpKind::Add | OpKind::Sub => sum_to(g, sa)?,
                    OpKind::Mul => sum_to(g.mul(p(1))?, sa)?,
                    _ => sum_to(g.div(p(1))?, sa)?,
                })
            } else {
                None
            };
            let gb = if need[1] {
                Some(match op {
                    OpKind::Add => sum_to(g, sb)?,
                    OpKind::Sub => sum_to(g.neg()?, sb)?,
                    OpKind::Mul => sum_to(g.mul(p(0))?, sb)?,
                    // d(a/b)/db = -(a/b)/b
                    _ => sum_to(g.mul(y)?.div(p(1))?.neg()?, sb)?,
                })
            } else {
                None
            };
            Ok(vec![ga, gb])
        }
        OpKind::Neg => one(g.neg()),
        OpKind::Scale(c) => one(g.scale(*c)),
        OpKind::Shift(_) => Ok(vec![Some(g)]),
        OpKind::MatMul => {
            let ga = if need[0] { Some(g.matmul(p(1).t()?)?) } else { None };
            let gb = if need[1] { Some(p(0).t()?.matmul(g)?) } else { None };
            Ok(vec![ga, gb])
        }
        OpKind::Transpose => one(g.t()),
        OpKind::Sigmoid => one(g.mul(y.mul(y.neg()?.shift(1.0)?)?)),
        OpKind::Tanh => one(g.mul(y.square()?.neg()?.shift(1.0)?)),
        OpKind::Relu => one(g.mul(mask(tape, parents[0], |x| if x > 0.0 { 1.0 } else { 0.0 }))),
        OpKind::Exp => one(g.mul(y)),
        OpKind::Log => one(g.div(p(0))),
        OpKind::Sqrt => one(g.div(y)?.scale(0.5)),
        OpKind::Square => one(g.mul(p(0))?.scale(2.0)),
        OpKind::Abs => one(g.mul(mask(tape, parents[0], |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }))),
        OpKind::Softplus => one(g.mul(p(0).sigmoid()?)),
        OpKind::SumAll | OpKind::SumAxis(_) => {
            let (r, c) = shape_of(tape, parents[0]);
            one(g.expand(r, c))
        }
        OpKind::Expand { .. } => one(sum_to(g, shape_of(tape, parents[0]))),
        OpKind::Concat(axis) => {
            let mut offset = 0;
            let mut out = Vec::with_capacity(parents.len());
            let (gr, gc) = g.shape();
            for (k, &pid) in parents.iter().enumerate() {
                let (r, c) = shape_of(tape, pid);
                if need[k] {
                    out.push(Some(if *axis == 0 {
                        g.slice(offset, 0, r, gc)?
                    } else {
                        g.slice(0, offset, gr, c)?
                    }));
                } else {
                    out.push(None);
                }
                offset += if *axis == 0 { r } else { c };
            }
            Ok(out)
        }
        OpKind::Slice { r0, c0, .. } => {
            let (r, c) = shape_of(tape, parents[0]);
            one(g.pad(*r0, *c0, r, c))
        }
        OpKind::Pad { r0, c0, .. } => {
            let (r, c) = shape_of(tape, parents[0]);
            one(g.slice(*r0, *c0, r, c))
        }
        OpKind::Softmax => {
            // y ⊙ (g − rowsum(g ⊙ y))
            let inner = g.mul(y)?.sum_axis(1)?;
            one(g.sub(inner)?.mul(y))
        }
        OpKind::SoftmaxCrossEntropy(labels) => {
            let x = p(0);
            let (r, c) = x.shape();
            let mut onehot = Tensor::zeros(r, c);
            for (i, &l) in labels.iter().enumerate() {
                onehot.set(i, l, 1.0);
            }
            let diff = x.softmax()?.sub(tape.constant(onehot))?;
            one(diff.mul(g.scale(1.0 / r as f64)?))
        }
    }
}
