use crate::error::{Error, Result};
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrentCell {
    /// Input, forget and output gates with a tanh cell candidate.
    Lstm,
    /// Update and reset gates.
    Gru,
}

impl RecurrentCell {
    fn gates(self) -> usize {
        match self {
            RecurrentCell::Lstm => 4,
            RecurrentCell::Gru => 3,
        }
    }
}

/// Entries per direction `{prefix}.{fw,bw}.{wx,wh,b}`; gate blocks are
/// stacked row-wise (LSTM: i, f, g, o; GRU: z, r, n).
fn init_bidirectional(
    store: &mut ParameterStore,
    prefix: &str,
    cell: RecurrentCell,
    d_in: usize,
    d: usize,
    seed: u64,
) -> Result<()> {
    let rows = cell.gates() * d;
    for dir in ["fw", "bw"] {
        store.insert_uniform(&format!("{prefix}.{dir}.wx"), vec![rows, d_in], d_in, seed)?;
        store.insert_uniform(&format!("{prefix}.{dir}.wh"), vec![rows, d], d, seed)?;
        store.insert_uniform(&format!("{prefix}.{dir}.b"), vec![rows], d, seed)?;
    }
    Ok(())
}

pub fn init_bilstm(store: &mut ParameterStore, prefix: &str, d_in: usize, d: usize, seed: u64) -> Result<()> {
    init_bidirectional(store, prefix, RecurrentCell::Lstm, d_in, d, seed)
}

pub fn init_bigru(store: &mut ParameterStore, prefix: &str, d_in: usize, d: usize, seed: u64) -> Result<()> {
    init_bidirectional(store, prefix, RecurrentCell::Gru, d_in, d, seed)
}

fn run_direction(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    cell: RecurrentCell,
    x: Var,
    reverse: bool,
) -> Result<Vec<Var>> {
    let wx = g.param(store, &format!("{prefix}.wx"))?;
    let wh = g.param(store, &format!("{prefix}.wh"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let d = g.shape(wh).1;
    let t_len = g.shape(x).1;
    let xp = g.affine(wx, x, b)?;

    let mut h = g.constant(Tensor::zeros(vec![d, 1]));
    let mut c = h;
    let mut out = vec![h; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let xt = g.column(xp, t)?;
        let hh = g.matmul(wh, h)?;
        match cell {
            RecurrentCell::Lstm => {
                let z = g.add(xt, hh)?;
                let zi = g.slice_rows(z, 0, d)?;
                let zf = g.slice_rows(z, d, d)?;
                let zg = g.slice_rows(z, 2 * d, d)?;
                let zo = g.slice_rows(z, 3 * d, d)?;
                let i = g.sigmoid(zi)?;
                let f = g.sigmoid(zf)?;
                let cand = g.tanh(zg)?;
                let o = g.sigmoid(zo)?;
                let keep = g.mul(f, c)?;
                let write = g.mul(i, cand)?;
                c = g.add(keep, write)?;
                let tc = g.tanh(c)?;
                h = g.mul(o, tc)?;
            }
            RecurrentCell::Gru => {
                let xz = g.slice_rows(xt, 0, d)?;
                let xr = g.slice_rows(xt, d, d)?;
                let xn = g.slice_rows(xt, 2 * d, d)?;
                let hz = g.slice_rows(hh, 0, d)?;
                let hr = g.slice_rows(hh, d, d)?;
                let hn = g.slice_rows(hh, 2 * d, d)?;
                let az = g.add(xz, hz)?;
                let z = g.sigmoid(az)?;
                let ar = g.add(xr, hr)?;
                let r = g.sigmoid(ar)?;
                let gated = g.mul(r, hn)?;
                let an = g.add(xn, gated)?;
                let n = g.tanh(an)?;
                // h' = (1 - z)·n + z·h = n + z·(h - n)
                let diff = g.sub(h, n)?;
                let zd = g.mul(z, diff)?;
                h = g.add(n, zd)?;
            }
        }
        out[t] = h;
    }
    Ok(out)
}

fn encode(g: &mut Graph, store: &ParameterStore, prefix: &str, cell: RecurrentCell, x: Var) -> Result<Var> {
    if g.shape(x).1 == 0 {
        return Err(Error::Empty("recurrent encoder input"));
    }
    let fw = run_direction(g, store, &format!("{prefix}.fw"), cell, x, false)?;
    let bw = run_direction(g, store, &format!("{prefix}.bw"), cell, x, true)?;
    let fw = g.concat_cols(&fw)?;
    let bw = g.concat_cols(&bw)?;
    g.concat_rows(&[fw, bw])
}

/// Bidirectional LSTM over the columns of `x` (`d_in × T`), returning
/// `2d × T` with the forward state above the backward state.
pub fn bilstm_encode(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    encode(g, store, prefix, RecurrentCell::Lstm, x)
}

/// Bidirectional GRU, same layout as [`bilstm_encode`].
pub fn bigru_encode(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    encode(g, store, prefix, RecurrentCell::Gru, x)
}
