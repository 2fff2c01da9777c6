//! Socket transport for multi-process distributed training.
//!
//! Frame format: a 4-byte big-endian length header followed by a JSON
//! body. The handshake carries the protocol version "sep/1" plus the
//! problem dimensions; matrices travel as row-major nested arrays.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LocalWorker, Partition, PartitionMessage, WorkerPool, PROTOCOL_VERSION};
use crate::ep::{PosteriorApprox, SiteFactors};
use crate::error::{Result, SepError};
use crate::kernel::Hyperparameters;
use crate::objective::GradientVector;

fn io_err(e: std::io::Error) -> SepError {
    SepError::Distributed(format!("socket i/o: {e}"))
}

pub fn write_frame(stream: &mut TcpStream, msg: &WireMessage) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    let len = u32::try_from(body.len())
        .map_err(|_| SepError::Distributed("frame too large".into()))?;
    stream.write_all(&len.to_be_bytes()).map_err(io_err)?;
    stream.write_all(&body).map_err(io_err)?;
    stream.flush().map_err(io_err)
}

pub fn read_frame(stream: &mut TcpStream) -> Result<WireMessage> {
    let mut header = [0u8; 4];
    stream.read_exact(&mut header).map_err(io_err)?;
    let len = u32::from_be_bytes(header) as usize;
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body).map_err(io_err)?;
    Ok(serde_json::from_slice(&body)?)
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(SepError::Distributed("ragged matrix on wire".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

#[derive(Serialize, Deserialize, Clone)]
pub struct PosteriorWire {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl PosteriorWire {
    pub fn from_posterior(p: &PosteriorApprox) -> Self {
        Self {
            mu: p.mu.iter().copied().collect(),
            sigma: matrix_to_rows(&p.sigma),
        }
    }

    /// Worker-side posterior: only μ and Σ matter for projections; the
    /// derived master-side quantities are left unset.
    pub fn to_posterior(&self) -> Result<PosteriorApprox> {
        let mu = DVector::from_vec(self.mu.clone());
        let sigma = rows_to_matrix(&self.sigma)?;
        let m = mu.len();
        Ok(PosteriorApprox {
            mu,
            sigma,
            nat_linear: DVector::zeros(m),
            log_det_sigma: f64::NAN,
            half_log_det_ratio: f64::NAN,
            hyper_version: 0,
        })
    }
}

#[derive(Serialize, Deserialize, Clone)]
pub struct PartitionMessageWire {
    pub worker_id: usize,
    pub epoch: u64,
    pub precision_contribution: Vec<Vec<f64>>,
    pub linear_contribution: Vec<f64>,
    pub log_ztilde_sum: f64,
    pub gradient_site_partial: Option<Vec<f64>>,
    pub site_deltas: Vec<(usize, f64, f64)>,
    pub skipped: usize,
}

impl PartitionMessageWire {
    fn from_message(m: &PartitionMessage) -> Self {
        Self {
            worker_id: m.worker_id,
            epoch: m.epoch,
            precision_contribution: matrix_to_rows(&m.precision_contribution),
            linear_contribution: m.linear_contribution.iter().copied().collect(),
            log_ztilde_sum: m.log_ztilde_sum,
            gradient_site_partial: m
                .gradient_site_partial
                .as_ref()
                .map(|g| g.values.iter().copied().collect()),
            site_deltas: m.site_deltas.clone(),
            skipped: m.skipped,
        }
    }

    fn to_message(&self) -> Result<PartitionMessage> {
        Ok(PartitionMessage {
            worker_id: self.worker_id,
            epoch: self.epoch,
            precision_contribution: rows_to_matrix(&self.precision_contribution)?,
            linear_contribution: DVector::from_vec(self.linear_contribution.clone()),
            log_ztilde_sum: self.log_ztilde_sum,
            gradient_site_partial: self.gradient_site_partial.as_ref().map(|g| GradientVector {
                values: DVector::from_vec(g.clone()),
            }),
            site_deltas: self.site_deltas.clone(),
            skipped: self.skipped,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        protocol: String,
        m: usize,
        d: usize,
        epoch: u64,
    },
    HelloAck {
        protocol: String,
    },
    Setup {
        worker_id: usize,
        indices: Vec<usize>,
        x_rows: Vec<Vec<f64>>,
        labels: Vec<f64>,
    },
    SetupAck,
    SweepReq {
        epoch: u64,
        hyper: Hyperparameters,
        hyper_version: u64,
        posterior: PosteriorWire,
        rho: f64,
    },
    SweepRep(PartitionMessageWire),
    FinishReq {
        epoch: u64,
        posterior: PosteriorWire,
        want_grad: bool,
    },
    FinishRep {
        worker_id: usize,
        log_ztilde_sum: f64,
        grad: Option<Vec<f64>>,
    },
    ReaggReq {
        hyper: Hyperparameters,
        hyper_version: u64,
    },
    ReaggRep {
        worker_id: usize,
        precision: Vec<Vec<f64>>,
        linear: Vec<f64>,
    },
    GatherReq,
    GatherRep {
        indices: Vec<usize>,
        nu: Vec<f64>,
        mu: Vec<f64>,
        log_s: Vec<f64>,
    },
    Shutdown,
    Error {
        message: String,
    },
}

/// Serve one master connection until Shutdown. Returns after the session.
pub fn serve_connection(mut stream: TcpStream) -> Result<()> {
    match read_frame(&mut stream)? {
        WireMessage::Hello { protocol, .. } => {
            if protocol != PROTOCOL_VERSION {
                write_frame(
                    &mut stream,
                    &WireMessage::Error {
                        message: format!(
                            "protocol mismatch: worker speaks {PROTOCOL_VERSION}, master sent {protocol}"
                        ),
                    },
                )?;
                return Err(SepError::Protocol {
                    expected: PROTOCOL_VERSION.into(),
                    got: protocol,
                });
            }
            write_frame(
                &mut stream,
                &WireMessage::HelloAck {
                    protocol: PROTOCOL_VERSION.into(),
                },
            )?;
        }
        _ => {
            return Err(SepError::Distributed(
                "expected handshake as the first frame".into(),
            ))
        }
    }
    let mut worker: Option<LocalWorker> = None;
    loop {
        let msg = read_frame(&mut stream)?;
        let reply = handle(&mut worker, msg);
        match reply {
            Ok(Some(r)) => write_frame(&mut stream, &r)?,
            Ok(None) => return Ok(()), // shutdown
            Err(e) => {
                write_frame(
                    &mut stream,
                    &WireMessage::Error {
                        message: e.to_string(),
                    },
                )?;
            }
        }
    }
}

fn handle(worker: &mut Option<LocalWorker>, msg: WireMessage) -> Result<Option<WireMessage>> {
    match msg {
        WireMessage::Setup {
            worker_id,
            indices,
            x_rows,
            labels,
        } => {
            let x = rows_to_matrix(&x_rows)?;
            let part = Partition {
                worker_id,
                indices: indices.clone(),
            };
            // LocalWorker::new gathers rows by index; here rows arrive
            // already gathered, so index them identically.
            let mut w = LocalWorker::new(
                &Partition {
                    worker_id,
                    indices: (0..x.nrows()).collect(),
                },
                &x,
                &DVector::from_vec(labels),
            );
            w.indices = part.indices;
            *worker = Some(w);
            Ok(Some(WireMessage::SetupAck))
        }
        WireMessage::SweepReq {
            epoch,
            mut hyper,
            hyper_version,
            posterior,
            rho,
        } => {
            hyper.set_version(hyper_version);
            let w = worker
                .as_mut()
                .ok_or_else(|| SepError::Distributed("sweep before setup".into()))?;
            let p = posterior.to_posterior()?;
            let m = w.sweep(epoch, &hyper, &p, rho)?;
            Ok(Some(WireMessage::SweepRep(PartitionMessageWire::from_message(&m))))
        }
        WireMessage::FinishReq {
            epoch: _,
            posterior,
            want_grad,
        } => {
            let w = worker
                .as_mut()
                .ok_or_else(|| SepError::Distributed("finish before setup".into()))?;
            let p = posterior.to_posterior()?;
            let (ztilde, grad) = w.finish(&p, want_grad)?;
            Ok(Some(WireMessage::FinishRep {
                worker_id: w.id,
                log_ztilde_sum: ztilde,
                grad: grad.map(|g| g.values.iter().copied().collect()),
            }))
        }
        WireMessage::ReaggReq {
            mut hyper,
            hyper_version,
        } => {
            hyper.set_version(hyper_version);
            let w = worker
                .as_mut()
                .ok_or_else(|| SepError::Distributed("reaggregate before setup".into()))?;
            let (prec, lin) = w.reaggregate(&hyper)?;
            Ok(Some(WireMessage::ReaggRep {
                worker_id: w.id,
                precision: matrix_to_rows(&prec),
                linear: lin.iter().copied().collect(),
            }))
        }
        WireMessage::GatherReq => {
            let w = worker
                .as_ref()
                .ok_or_else(|| SepError::Distributed("gather before setup".into()))?;
            let (indices, nu, mu, log_s) = w.sites();
            Ok(Some(WireMessage::GatherRep {
                indices,
                nu: nu.iter().copied().collect(),
                mu: mu.iter().copied().collect(),
                log_s: log_s.iter().copied().collect(),
            }))
        }
        WireMessage::Shutdown => Ok(None),
        _ => Err(SepError::Distributed("unexpected message".into())),
    }
}

/// Bind, accept a single master connection, and serve it to completion.
pub fn run_worker(listen: &str) -> Result<()> {
    let listener = TcpListener::bind(listen).map_err(io_err)?;
    let (stream, _) = listener.accept().map_err(io_err)?;
    serve_connection(stream)
}

/// Master-side pool speaking the socket protocol to remote workers.
pub struct SocketPool {
    streams: Vec<TcpStream>,
}

impl SocketPool {
    /// Connect, handshake, and ship each worker its partition.
    pub fn connect<A: ToSocketAddrs>(
        addrs: &[A],
        partitions: &[Partition],
        x_std: &DMatrix<f64>,
        labels: &DVector<f64>,
        m: usize,
        d: usize,
        timeout: Duration,
    ) -> Result<Self> {
        if addrs.len() != partitions.len() {
            return Err(SepError::Distributed(format!(
                "{} worker addresses for {} partitions",
                addrs.len(),
                partitions.len()
            )));
        }
        let mut streams = Vec::with_capacity(addrs.len());
        for (addr, part) in addrs.iter().zip(partitions) {
            let resolved = addr
                .to_socket_addrs()
                .map_err(io_err)?
                .next()
                .ok_or_else(|| SepError::Distributed("unresolvable worker address".into()))?;
            let mut stream = TcpStream::connect_timeout(&resolved, timeout).map_err(io_err)?;
            stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
            stream.set_nodelay(true).map_err(io_err)?;
            write_frame(
                &mut stream,
                &WireMessage::Hello {
                    protocol: PROTOCOL_VERSION.into(),
                    m,
                    d,
                    epoch: 0,
                },
            )?;
            match read_frame(&mut stream)? {
                WireMessage::HelloAck { protocol } if protocol == PROTOCOL_VERSION => {}
                WireMessage::HelloAck { protocol } | WireMessage::Error { message: protocol } => {
                    return Err(SepError::Protocol {
                        expected: PROTOCOL_VERSION.into(),
                        got: protocol,
                    })
                }
                _ => {
                    return Err(SepError::Distributed(
                        "unexpected handshake reply".into(),
                    ))
                }
            }
            // ship the gathered partition rows
            let k = part.indices.len();
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|i| x_std.row(part.indices[i]).iter().copied().collect())
                .collect();
            let lab: Vec<f64> = part.indices.iter().map(|&i| labels[i]).collect();
            write_frame(
                &mut stream,
                &WireMessage::Setup {
                    worker_id: part.worker_id,
                    indices: part.indices.clone(),
                    x_rows: rows,
                    labels: lab,
                },
            )?;
            match read_frame(&mut stream)? {
                WireMessage::SetupAck => {}
                WireMessage::Error { message } => return Err(SepError::Distributed(message)),
                _ => return Err(SepError::Distributed("unexpected setup reply".into())),
            }
            streams.push(stream);
        }
        Ok(Self { streams })
    }

    fn broadcast_collect(&mut self, msgs: &[WireMessage]) -> Result<Vec<WireMessage>> {
        for (stream, msg) in self.streams.iter_mut().zip(msgs) {
            write_frame(stream, msg)?;
        }
        let mut replies = Vec::with_capacity(self.streams.len());
        for stream in self.streams.iter_mut() {
            match read_frame(stream)? {
                WireMessage::Error { message } => return Err(SepError::Distributed(message)),
                other => replies.push(other),
            }
        }
        Ok(replies)
    }
}

impl WorkerPool for SocketPool {
    fn num_workers(&self) -> usize {
        self.streams.len()
    }

    fn sweep_round(
        &mut self,
        epoch: u64,
        hyper: &Hyperparameters,
        posterior: &PosteriorApprox,
        rho: f64,
    ) -> Result<Vec<PartitionMessage>> {
        let pw = PosteriorWire::from_posterior(posterior);
        let reqs: Vec<WireMessage> = (0..self.streams.len())
            .map(|_| WireMessage::SweepReq {
                epoch,
                hyper: hyper.clone(),
                hyper_version: hyper.version(),
                posterior: pw.clone(),
                rho,
            })
            .collect();
        self.broadcast_collect(&reqs)?
            .into_iter()
            .map(|r| match r {
                WireMessage::SweepRep(w) => w.to_message(),
                _ => Err(SepError::Distributed("expected sweep reply".into())),
            })
            .collect()
    }

    fn finish_round(
        &mut self,
        epoch: u64,
        posterior: &PosteriorApprox,
        want_grad: bool,
    ) -> Result<Vec<(f64, Option<GradientVector>)>> {
        let pw = PosteriorWire::from_posterior(posterior);
        let reqs: Vec<WireMessage> = (0..self.streams.len())
            .map(|_| WireMessage::FinishReq {
                epoch,
                posterior: pw.clone(),
                want_grad,
            })
            .collect();
        let mut out: Vec<(usize, f64, Option<GradientVector>)> = self
            .broadcast_collect(&reqs)?
            .into_iter()
            .map(|r| match r {
                WireMessage::FinishRep {
                    worker_id,
                    log_ztilde_sum,
                    grad,
                } => Ok((
                    worker_id,
                    log_ztilde_sum,
                    grad.map(|g| GradientVector {
                        values: DVector::from_vec(g),
                    }),
                )),
                _ => Err(SepError::Distributed("expected finish reply".into())),
            })
            .collect::<Result<_>>()?;
        out.sort_by_key(|(id, _, _)| *id);
        Ok(out.into_iter().map(|(_, z, g)| (z, g)).collect())
    }

    fn reaggregate_round(
        &mut self,
        hyper: &Hyperparameters,
    ) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
        let reqs: Vec<WireMessage> = (0..self.streams.len())
            .map(|_| WireMessage::ReaggReq {
                hyper: hyper.clone(),
                hyper_version: hyper.version(),
            })
            .collect();
        let mut out: Vec<(usize, DMatrix<f64>, DVector<f64>)> = self
            .broadcast_collect(&reqs)?
            .into_iter()
            .map(|r| match r {
                WireMessage::ReaggRep {
                    worker_id,
                    precision,
                    linear,
                } => Ok((
                    worker_id,
                    rows_to_matrix(&precision)?,
                    DVector::from_vec(linear),
                )),
                _ => Err(SepError::Distributed("expected reaggregate reply".into())),
            })
            .collect::<Result<_>>()?;
        out.sort_by_key(|(id, _, _)| *id);
        Ok(out.into_iter().map(|(_, a, h)| (a, h)).collect())
    }

    fn gather_sites(&mut self, n: usize) -> Result<SiteFactors> {
        let reqs: Vec<WireMessage> = (0..self.streams.len()).map(|_| WireMessage::GatherReq).collect();
        let mut sites = SiteFactors::init(n);
        for r in self.broadcast_collect(&reqs)? {
            match r {
                WireMessage::GatherRep {
                    indices,
                    nu,
                    mu,
                    log_s,
                } => {
                    for (j, &i) in indices.iter().enumerate() {
                        sites.nu[i] = nu[j];
                        sites.mu[i] = mu[j];
                        sites.log_s[i] = log_s[j];
                    }
                }
                _ => return Err(SepError::Distributed("expected gather reply".into())),
            }
        }
        Ok(sites)
    }

    fn shutdown(&mut self) {
        for stream in self.streams.iter_mut() {
            let _ = write_frame(stream, &WireMessage::Shutdown);
        }
    }
}
