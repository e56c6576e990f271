//! TCP server and client speaking the [`crate::wire`] protocol.
//!
//! A server holds the replicated database. On QUERY it checks the parameter
//! block and encoding-matrix fingerprint, stores the query and acknowledges;
//! FETCH requests then return projections on the listed sub-queries. The
//! client queries every server in parallel, decides which responders to use
//! once enough have acknowledged, and fetches only their prefixes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::ErrorKind;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use num::rational::Rational64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::SymbolVector;
use crate::protocol::{capacity_asymptotic, scheme_fingerprint, Database, RetrievalSession};
use crate::sim::{SimMetrics, Strategy};
use crate::staircase::StaircaseCode;
use crate::wire::{read_message, write_message, ErrorCode, Message, ParamBlock, QueryFrame};

const POLL: Duration = Duration::from_millis(20);

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Pause between receiving a query and acknowledging it.
    pub response_delay: Duration,
    /// Read queries but never answer, like a server that crashes on receipt.
    pub drop_queries: bool,
}

struct Shared {
    code: StaircaseCode,
    db: Arc<Database>,
    params: ParamBlock,
    fingerprint: [u8; 32],
    options: ServeOptions,
    stop: Arc<AtomicBool>,
    next_session: AtomicU64,
    /// Digests of every query accepted so far.
    seen: Mutex<HashSet<[u8; 32]>>,
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes open connections at their next poll and
    /// waits for the accept loop to exit.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server is stopped from another thread.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `addr` and serves `db` in background threads, one per connection.
pub fn serve<A: ToSocketAddrs>(
    addr: A,
    code: StaircaseCode,
    db: Arc<Database>,
    options: ServeOptions,
) -> Result<ServerHandle> {
    let p = code.params();
    if db.m() != p.m()
        || db.s() != p.s()
        || db.parts() != p.alpha_prime()
        || db.field() != code.field()
    {
        return Err(Error::DimensionMismatch(
            "database layout does not match the scheme".into(),
        ));
    }
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Shared {
        params: ParamBlock::from(p),
        fingerprint: scheme_fingerprint(&code),
        code,
        db,
        options,
        stop: Arc::clone(&stop),
        next_session: AtomicU64::new(1),
        seen: Mutex::new(HashSet::new()),
    });
    let thread = thread::spawn(move || accept_loop(listener, shared));
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = Arc::clone(&shared);
                workers.push(thread::spawn(move || {
                    let _ = handle_connection(stream, &shared);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
        workers.retain(|w: &JoinHandle<()>| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Waits until a frame starts arriving; `false` if stopped or closed.
fn wait_readable(stream: &TcpStream, stop: &AtomicBool) -> Result<bool> {
    let mut probe = [0u8; 1];
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(false);
        }
        match stream.peek(&mut probe) {
            Ok(0) => return Ok(false),
            Ok(_) => return Ok(true),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

fn sleep_unless_stopped(total: Duration, stop: &AtomicBool) -> bool {
    let end = Instant::now() + total;
    while Instant::now() < end {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        thread::sleep(POLL.min(end.saturating_duration_since(Instant::now())));
    }
    !stop.load(Ordering::SeqCst)
}

fn query_digest(sub_queries: &[SymbolVector]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in sub_queries {
        for &x in v.as_slice() {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().into()
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut writer = stream.try_clone()?;
    let mut reader = stream.try_clone()?;
    let mut session: Option<(u64, Vec<SymbolVector>)> = None;
    let alpha = shared.code.params().alpha();
    loop {
        if !wait_readable(&stream, &shared.stop)? {
            break;
        }
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        let msg = read_message(&mut reader);
        stream.set_read_timeout(Some(POLL))?;
        let msg = match msg {
            Ok(m) => m,
            Err(Error::MalformedFrame(why)) => {
                write_message(&mut writer, &Message::error(ErrorCode::Malformed, why))?;
                break;
            }
            Err(e) => return Err(e),
        };
        match msg {
            Message::Query(q) => {
                if q.params != shared.params || q.fingerprint != shared.fingerprint {
                    let why = "parameters or encoding matrix differ from this server's";
                    write_message(
                        &mut writer,
                        &Message::error(ErrorCode::HandshakeMismatch, why),
                    )?;
                    break;
                }
                let fresh = shared
                    .seen
                    .lock()
                    .map(|mut seen| seen.insert(query_digest(&q.sub_queries)))
                    .unwrap_or(false);
                if !fresh {
                    write_message(
                        &mut writer,
                        &Message::error(ErrorCode::Replayed, "query already answered"),
                    )?;
                    break;
                }
                if shared.options.drop_queries {
                    break;
                }
                if !sleep_unless_stopped(shared.options.response_delay, &shared.stop) {
                    break;
                }
                let id = shared.next_session.fetch_add(1, Ordering::SeqCst);
                session = Some((id, q.sub_queries));
                write_message(
                    &mut writer,
                    &Message::Response {
                        session: id,
                        columns: Vec::new(),
                    },
                )?;
            }
            Message::Fetch {
                session: sid,
                columns,
            } => {
                let Some((id, subs)) = session.as_ref().filter(|(id, _)| *id == sid) else {
                    write_message(
                        &mut writer,
                        &Message::error(ErrorCode::BadSession, format!("unknown session {sid}")),
                    )?;
                    continue;
                };
                if let Some(&bad) = columns.iter().find(|&&c| c >= alpha as u64) {
                    let why = format!("column {bad} out of range for {alpha} sub-queries");
                    write_message(
                        &mut writer,
                        &Message::error(ErrorCode::ColumnOutOfRange, why),
                    )?;
                    continue;
                }
                let projected: Result<Vec<SymbolVector>> = columns
                    .iter()
                    .map(|&c| shared.db.project(&subs[c as usize]))
                    .collect();
                let reply = match projected {
                    Ok(cols) => Message::Response {
                        session: *id,
                        columns: cols,
                    },
                    Err(e) => Message::error(ErrorCode::Internal, e.to_string()),
                };
                write_message(&mut writer, &reply)?;
            }
            _ => {
                write_message(
                    &mut writer,
                    &Message::error(ErrorCode::Malformed, "unexpected message type"),
                )?;
                break;
            }
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct ClientOptions {
    pub strategy: Strategy,
    /// Bound on the whole retrieval, including connection setup.
    pub timeout: Duration,
    /// Seed for the query randomness; `None` draws it from the OS.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct NetRetrieval {
    pub file: Vec<u64>,
    /// Servers whose sub-responses were used for decoding (0-based).
    pub responders: Vec<usize>,
    /// Times the plan was revised after a chosen responder failed.
    pub replans: usize,
    pub metrics: SimMetrics,
}

enum Event {
    Ready(usize),
    Data(usize, Vec<SymbolVector>),
    Failed(usize, Error),
}

fn remote_error(code: u64, message: String) -> Error {
    if code == ErrorCode::HandshakeMismatch as u64 {
        Error::HandshakeMismatch(message)
    } else {
        Error::Remote { code, message }
    }
}

fn worker(
    server: usize,
    addr: SocketAddr,
    frame: QueryFrame,
    timeout: Duration,
    events: Sender<Event>,
    commands: Receiver<Vec<u64>>,
) {
    let run = || -> Result<()> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let mut rw = stream;
        write_message(&mut rw, &Message::Query(frame))?;
        let session = match read_message(&mut rw)? {
            Message::Response { session, columns } if columns.is_empty() => session,
            Message::Error { code, message } => return Err(remote_error(code, message)),
            _ => {
                return Err(Error::MalformedFrame(
                    "expected query acknowledgement".into(),
                ))
            }
        };
        if events.send(Event::Ready(server)).is_err() {
            return Ok(());
        }
        while let Ok(columns) = commands.recv() {
            let want = columns.len();
            write_message(&mut rw, &Message::Fetch { session, columns })?;
            match read_message(&mut rw)? {
                Message::Response {
                    session: s,
                    columns,
                } if s == session && columns.len() == want => {
                    if events.send(Event::Data(server, columns)).is_err() {
                        break;
                    }
                }
                Message::Error { code, message } => return Err(remote_error(code, message)),
                _ => return Err(Error::MalformedFrame("unexpected reply to fetch".into())),
            }
        }
        Ok(())
    };
    if let Err(e) = run() {
        let _ = events.send(Event::Failed(server, e));
    }
}

/// Retrieves file `file` (0-based) from the servers at `endpoints`, one per
/// server in index order.
pub fn retrieve(
    endpoints: &[SocketAddr],
    code: &StaircaseCode,
    file: usize,
    options: ClientOptions,
) -> Result<NetRetrieval> {
    let p = code.params();
    if endpoints.len() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} endpoints for n = {}",
            endpoints.len(),
            p.n()
        )));
    }
    let target = match options.strategy {
        Strategy::WaitFor(mu) => {
            p.level_for(mu)?;
            mu
        }
        Strategy::Deadline(_) => p.n(),
    };
    let start = Instant::now();
    let hard_end = start + options.timeout;
    let (mut session, queries) =
        RetrievalSession::start(code, file, options.seed.unwrap_or_else(rand::random))?;
    let params = ParamBlock::from(p);
    let (tx, rx) = mpsc::channel();
    let mut commands = Vec::with_capacity(p.n());
    for (query, &addr) in queries.into_iter().zip(endpoints) {
        let (ctx, crx) = mpsc::channel();
        commands.push(ctx);
        let frame = QueryFrame {
            params,
            fingerprint: query.fingerprint,
            server: query.server as u64,
            sub_queries: query.sub_queries,
        };
        let events = tx.clone();
        let server = query.server;
        let timeout = options.timeout;
        thread::spawn(move || worker(server, addr, frame, timeout, events, crx));
    }
    drop(tx);

    let wait_end = match options.strategy {
        Strategy::Deadline(ms) => (start + Duration::from_millis(ms)).min(hard_end),
        Strategy::WaitFor(_) => hard_end,
    };
    let mut ready: Vec<usize> = Vec::new();
    let mut failures: BTreeMap<usize, Error> = BTreeMap::new();
    let mut timed_out = false;
    while ready.len() < target && ready.len() + failures.len() < p.n() {
        let left = wait_end.saturating_duration_since(Instant::now());
        if left.is_zero() {
            timed_out = true;
            break;
        }
        match rx.recv_timeout(left) {
            Ok(Event::Ready(l)) => ready.push(l),
            Ok(Event::Failed(l, e)) => {
                failures.insert(l, e);
            }
            Ok(Event::Data(..)) => {}
            Err(RecvTimeoutError::Timeout) => {
                timed_out = true;
                break;
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    let wait = start.elapsed();
    if ready.len() < p.k() {
        if let Some(e) = failures
            .values()
            .find(|e| matches!(e, Error::HandshakeMismatch(_)))
        {
            return Err(Error::HandshakeMismatch(e.to_string()));
        }
        if timed_out && matches!(options.strategy, Strategy::WaitFor(_)) {
            return Err(Error::Timeout(format!(
                "{} of {} servers answered",
                ready.len(),
                p.k()
            )));
        }
        return Err(Error::InsufficientResponders {
            have: ready.len(),
            need: p.k(),
        });
    }
    let realized_mu = ready.len();

    let mut alive: BTreeSet<usize> = ready.iter().copied().collect();
    let mut replans = 0;
    session.plan(&ready)?;
    let mut outstanding: BTreeSet<usize> = BTreeSet::new();
    loop {
        let plan = session.current_plan().expect("planned").clone();
        for &l in &plan.responders {
            let missing = session.missing_columns(l);
            if !missing.is_empty() && !outstanding.contains(&l) {
                let cols = missing.iter().map(|&c| c as u64).collect();
                if commands[l].send(cols).is_ok() {
                    outstanding.insert(l);
                }
            }
        }
        if outstanding.is_empty()
            && plan
                .responders
                .iter()
                .all(|&l| session.missing_columns(l).is_empty())
        {
            break;
        }
        let left = hard_end.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Event::Data(l, cols)) => {
                outstanding.remove(&l);
                session.accept(l, cols);
            }
            Ok(Event::Failed(l, e)) => {
                outstanding.remove(&l);
                alive.remove(&l);
                failures.insert(l, e);
                if plan.responders.contains(&l) {
                    if alive.len() < p.k() {
                        return Err(Error::InsufficientResponders {
                            have: alive.len(),
                            need: p.k(),
                        });
                    }
                    let survivors: Vec<usize> = alive.iter().copied().collect();
                    session.plan(&survivors)?;
                    replans += 1;
                }
            }
            Ok(Event::Ready(_)) => {}
            Err(_) => return Err(Error::Timeout("download did not complete".into())),
        }
    }
    drop(commands);

    let downloaded = session.downloaded_symbols();
    let retrieved = session.finish()?;
    let metrics = SimMetrics {
        repetition: 0,
        file,
        realized_mu,
        wait_us: wait.as_micros() as u64,
        symbols: downloaded,
        rate: retrieved.rate,
        capacity: capacity_asymptotic(p.t(), retrieved.plan.mu())?,
        success: true,
    };
    Ok(NetRetrieval {
        file: retrieved.file,
        responders: retrieved.plan.responders,
        replans,
        metrics,
    })
}

/// Parses `host:port` strings.
pub fn parse_endpoints(list: &[String]) -> Result<Vec<SocketAddr>> {
    list.iter()
        .map(|s| {
            s.to_socket_addrs()
                .map_err(|e| Error::InvalidParameter(format!("endpoint {s}: {e}")))?
                .next()
                .ok_or_else(|| Error::InvalidParameter(format!("endpoint {s} did not resolve")))
        })
        .collect()
}

/// Rate as `numerator/denominator`.
pub fn rate_string(r: Rational64) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SchemeParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (StaircaseCode, Arc<Database>) {
        let code =
            StaircaseCode::vandermonde(SchemeParams::new(3, 2, 1, 2, 5, 3).unwrap()).unwrap();
        let db = Database::random(code.params(), &mut ChaCha20Rng::seed_from_u64(1));
        (code, Arc::new(db))
    }

    fn opts(strategy: Strategy) -> ClientOptions {
        ClientOptions {
            strategy,
            timeout: Duration::from_secs(5),
            seed: Some(3),
        }
    }

    #[test]
    fn all_servers_answer() {
        let (code, db) = setup();
        let servers: Vec<ServerHandle> = (0..3)
            .map(|_| {
                serve(
                    "127.0.0.1:0",
                    code.clone(),
                    Arc::clone(&db),
                    ServeOptions::default(),
                )
                .unwrap()
            })
            .collect();
        let addrs: Vec<SocketAddr> = servers.iter().map(ServerHandle::local_addr).collect();
        let got = retrieve(&addrs, &code, 1, opts(Strategy::WaitFor(3))).unwrap();
        assert_eq!(got.file, db.file(1).unwrap());
        assert_eq!(got.metrics.rate, Rational64::new(2, 3));
        assert_eq!(got.metrics.symbols, 9);
    }

    #[test]
    fn crashed_server_triggers_replan() {
        let (code, db) = setup();
        let crash = ServeOptions {
            drop_queries: true,
            ..Default::default()
        };
        let servers = [
            serve(
                "127.0.0.1:0",
                code.clone(),
                Arc::clone(&db),
                ServeOptions::default(),
            )
            .unwrap(),
            serve("127.0.0.1:0", code.clone(), Arc::clone(&db), crash).unwrap(),
            serve(
                "127.0.0.1:0",
                code.clone(),
                Arc::clone(&db),
                ServeOptions::default(),
            )
            .unwrap(),
        ];
        let addrs: Vec<SocketAddr> = servers.iter().map(ServerHandle::local_addr).collect();
        let got = retrieve(&addrs, &code, 0, opts(Strategy::WaitFor(3))).unwrap();
        assert_eq!(got.file, db.file(0).unwrap());
        assert_eq!(got.responders, vec![0, 2]);
        assert_eq!(got.metrics.rate, Rational64::new(1, 2));
    }

    #[test]
    fn deadline_skips_slow_server() {
        let (code, db) = setup();
        let slow = ServeOptions {
            response_delay: Duration::from_secs(3),
            ..Default::default()
        };
        let servers = [
            serve("127.0.0.1:0", code.clone(), Arc::clone(&db), slow).unwrap(),
            serve(
                "127.0.0.1:0",
                code.clone(),
                Arc::clone(&db),
                ServeOptions::default(),
            )
            .unwrap(),
            serve(
                "127.0.0.1:0",
                code.clone(),
                Arc::clone(&db),
                ServeOptions::default(),
            )
            .unwrap(),
        ];
        let addrs: Vec<SocketAddr> = servers.iter().map(ServerHandle::local_addr).collect();
        let got = retrieve(&addrs, &code, 1, opts(Strategy::Deadline(300))).unwrap();
        assert_eq!(got.file, db.file(1).unwrap());
        assert_eq!(got.responders, vec![1, 2]);
        assert_eq!(got.metrics.rate, Rational64::new(1, 2));
    }

    #[test]
    fn mismatched_scheme_is_rejected() {
        let (code, db) = setup();
        let servers: Vec<ServerHandle> = (0..3)
            .map(|_| {
                serve(
                    "127.0.0.1:0",
                    code.clone(),
                    Arc::clone(&db),
                    ServeOptions::default(),
                )
                .unwrap()
            })
            .collect();
        let addrs: Vec<SocketAddr> = servers.iter().map(ServerHandle::local_addr).collect();
        let other =
            StaircaseCode::vandermonde(SchemeParams::new(3, 2, 1, 2, 7, 3).unwrap()).unwrap();
        let err = retrieve(&addrs, &other, 0, opts(Strategy::WaitFor(2))).unwrap_err();
        assert!(matches!(err, Error::HandshakeMismatch(_)), "{err}");
    }

    #[test]
    fn server_rejects_bad_requests() {
        let (code, db) = setup();
        let server = serve(
            "127.0.0.1:0",
            code.clone(),
            Arc::clone(&db),
            ServeOptions::default(),
        )
        .unwrap();
        let mut s = TcpStream::connect(server.local_addr()).unwrap();
        write_message(
            &mut s,
            &Message::Fetch {
                session: 42,
                columns: vec![0],
            },
        )
        .unwrap();
        match read_message(&mut s).unwrap() {
            Message::Error { code, .. } => assert_eq!(code, ErrorCode::BadSession as u64),
            other => panic!("{other:?}"),
        }
        let q = crate::protocol::make_queries(&code, 0, 1)
            .unwrap()
            .remove(0);
        let frame = QueryFrame {
            params: ParamBlock::from(code.params()),
            fingerprint: q.fingerprint,
            server: 0,
            sub_queries: q.sub_queries,
        };
        write_message(&mut s, &Message::Query(frame.clone())).unwrap();
        let Message::Response { session, .. } = read_message(&mut s).unwrap() else {
            panic!("no ack")
        };
        write_message(
            &mut s,
            &Message::Fetch {
                session,
                columns: vec![7],
            },
        )
        .unwrap();
        match read_message(&mut s).unwrap() {
            Message::Error { code, .. } => assert_eq!(code, ErrorCode::ColumnOutOfRange as u64),
            other => panic!("{other:?}"),
        }
        // the same query on a new connection is refused
        let mut again = TcpStream::connect(server.local_addr()).unwrap();
        write_message(&mut again, &Message::Query(frame)).unwrap();
        match read_message(&mut again).unwrap() {
            Message::Error { code, .. } => assert_eq!(code, ErrorCode::Replayed as u64),
            other => panic!("{other:?}"),
        }
        server.shutdown();
    }
}
