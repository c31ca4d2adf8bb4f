//! Event-driven simulation kernel and message transport.
//!
//! Time is measured in microseconds. A scenario is a set of services
//! registered under authorities (`"app"`, `"provider"`, ...) plus scheduled
//! tasks; every message between services is framed as real HTTP/1.1 bytes
//! and parsed back at the receiver, so the byte-level protocol work is
//! exercised on every hop regardless of transport.
//!
//! Three execution modes share the same service code:
//! * **virtual** — events run back-to-back as fast as possible,
//! * **paced** — events run at wall-clock rate (1 sim second = 1 real second),
//! * **socket** — services live in separate OS processes and exchange the
//!   same bytes over loopback TCP; each process runs [`run_server_loop`].
//!
//! Reply callbacks never run inside `post` on the simulated transport (they
//! fire at a later virtual time) and, once a server loop is attached via
//! [`NetHandle::set_injector`], not on the socket transport either — the
//! exchange completes on a worker thread and the callback re-enters through
//! the loop. Services still must not hold `RefCell` borrows across a `post`
//! call: a plain socket client without a loop exchanges synchronously.

use crate::codecs::{
    frame_http_post, frame_http_response, parse_http_request, parse_http_response, split_http_url,
    total_message_len, ParsedHttpRequest, ParsedHttpResponse,
};
use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::rc::Rc;
use std::sync::mpsc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Microseconds since the Unix epoch, the shared timebase for
/// multi-process runs.
pub fn wall_epoch_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).expect("clock before 1970").as_micros() as u64
}

/// A service addressed by authority. Handlers receive a fully parsed
/// request and return complete response bytes (see
/// [`frame_http_response`]).
pub trait Service {
    fn handle(&self, net: &NetHandle, req: ParsedHttpRequest) -> Vec<u8>;
}

pub type ReplyFn = Box<dyn FnOnce(&NetHandle, ParsedHttpResponse)>;
type Task = Box<dyn FnOnce(&NetHandle)>;

struct Job {
    t_us: u64,
    seq: u64,
    task: Task,
}

impl PartialEq for Job {
    fn eq(&self, other: &Self) -> bool {
        (self.t_us, self.seq) == (other.t_us, other.seq)
    }
}
impl Eq for Job {}
impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Job {
    // Reversed so the BinaryHeap pops the earliest (t_us, seq) first.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (other.t_us, other.seq).cmp(&(self.t_us, self.seq))
    }
}

#[derive(Default)]
struct Scheduler {
    now_us: u64,
    next_seq: u64,
    queue: BinaryHeap<Job>,
}

impl Scheduler {
    fn push(&mut self, t_us: u64, task: Task) {
        let t_us = t_us.max(self.now_us); // never schedule into the past
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Job { t_us, seq, task });
    }

    fn peek_t(&self) -> Option<u64> {
        self.queue.peek().map(|j| j.t_us)
    }

    fn pop(&mut self) -> Option<Job> {
        self.queue.pop()
    }
}

enum Transport {
    /// In-process simulated network with a fixed per-hop latency.
    Sim,
    /// Loopback TCP to sibling processes; `routes` maps authority to
    /// `host:port`.
    Tcp { routes: RefCell<BTreeMap<String, String>> },
}

struct NetInner {
    sched: RefCell<Scheduler>,
    transport: Transport,
    services: RefCell<BTreeMap<String, Rc<dyn Service>>>,
    blocked: RefCell<BTreeSet<String>>,
    latency_us: Cell<u64>,
    /// Reply callbacks parked while a socket exchange completes on a
    /// worker thread; keyed by the token carried in [`Injected::ReplyReady`].
    parked_replies: RefCell<BTreeMap<u64, ReplyFn>>,
    next_reply_token: Cell<u64>,
    /// Channel into this process's server loop, when one is running.
    injector: RefCell<Option<mpsc::Sender<Injected>>>,
}

/// Shared handle to the scheduler, service registry, and transport.
/// Cloning is cheap; all clones refer to the same simulation.
#[derive(Clone)]
pub struct NetHandle {
    inner: Rc<NetInner>,
}

pub const DEFAULT_HOP_LATENCY_US: u64 = 1_000;

impl NetHandle {
    /// Single-process simulated network (virtual or paced execution).
    pub fn new_sim() -> Self {
        Self::with_transport(Transport::Sim)
    }

    /// Socket transport for one process of a multi-process run. The route
    /// table starts empty; fill it with [`NetHandle::set_route`].
    pub fn new_tcp() -> Self {
        Self::with_transport(Transport::Tcp { routes: RefCell::new(BTreeMap::new()) })
    }

    fn with_transport(transport: Transport) -> Self {
        NetHandle {
            inner: Rc::new(NetInner {
                sched: RefCell::new(Scheduler::default()),
                transport,
                services: RefCell::new(BTreeMap::new()),
                blocked: RefCell::new(BTreeSet::new()),
                latency_us: Cell::new(DEFAULT_HOP_LATENCY_US),
                parked_replies: RefCell::new(BTreeMap::new()),
                next_reply_token: Cell::new(0),
                injector: RefCell::new(None),
            }),
        }
    }

    /// Connects this handle to the process's server loop so socket
    /// exchanges can complete off-thread and deliver their replies back
    /// through [`Injected::ReplyReady`]. Without an injector, a post with a
    /// reply callback performs its exchange synchronously.
    pub fn set_injector(&self, tx: mpsc::Sender<Injected>) {
        *self.inner.injector.borrow_mut() = Some(tx);
    }

    pub fn is_socket_transport(&self) -> bool {
        matches!(self.inner.transport, Transport::Tcp { .. })
    }

    /// Current time in microseconds: scenario clock for the simulated
    /// transport, Unix wall clock for the socket transport.
    pub fn now_us(&self) -> u64 {
        match self.inner.transport {
            Transport::Sim => self.inner.sched.borrow().now_us,
            Transport::Tcp { .. } => wall_epoch_us(),
        }
    }

    pub fn register(&self, authority: &str, svc: Rc<dyn Service>) {
        self.inner.services.borrow_mut().insert(authority.to_string(), svc);
    }

    pub fn set_route(&self, authority: &str, addr: &str) {
        match &self.inner.transport {
            Transport::Tcp { routes } => {
                routes.borrow_mut().insert(authority.to_string(), addr.to_string());
            }
            Transport::Sim => panic!("routes only apply to the socket transport"),
        }
    }

    /// Drops all traffic addressed to `authority` until unblocked.
    /// Evaluated at delivery time, so in-flight messages die too.
    pub fn block_authority(&self, authority: &str) {
        self.inner.blocked.borrow_mut().insert(authority.to_string());
    }

    pub fn unblock_authority(&self, authority: &str) {
        self.inner.blocked.borrow_mut().remove(authority);
    }

    pub fn set_latency_us(&self, latency_us: u64) {
        self.inner.latency_us.set(latency_us);
    }

    pub fn latency_us(&self) -> u64 {
        self.inner.latency_us.get()
    }

    pub fn schedule_at(&self, t_us: u64, task: impl FnOnce(&NetHandle) + 'static) {
        self.inner.sched.borrow_mut().push(t_us, Box::new(task));
    }

    pub fn schedule_in(&self, delay_us: u64, task: impl FnOnce(&NetHandle) + 'static) {
        let t = self.now_us().saturating_add(delay_us);
        self.schedule_at(t, task);
    }

    /// Sends an HTTP POST to `url`. Fire-and-forget unless `on_reply` is
    /// given; a blocked destination silently swallows the message (and the
    /// reply never fires). Unknown authorities are a wiring bug and panic.
    pub fn post(
        &self,
        url: &str,
        content_type: &str,
        body: &[u8],
        on_reply: Option<ReplyFn>,
    ) {
        let framed = frame_http_post(url, content_type, body)
            .unwrap_or_else(|e| panic!("unpostable url {url:?}: {e}"));
        let authority = split_http_url(url).expect("just framed").host;
        self.send_framed(authority, framed, on_reply);
    }

    /// Sends a request that is already framed as wire bytes (for example,
    /// the output of a protocol-converter stage); the Host header names
    /// the destination.
    pub fn post_framed(&self, framed: Vec<u8>, on_reply: Option<ReplyFn>) {
        let req = parse_http_request(&framed)
            .unwrap_or_else(|e| panic!("unpostable framed request: {e}"));
        let authority = req
            .headers
            .get("host")
            .unwrap_or_else(|| panic!("framed request has no Host header"))
            .clone();
        self.send_framed(authority, framed, on_reply);
    }

    fn send_framed(&self, authority: String, framed: Vec<u8>, on_reply: Option<ReplyFn>) {
        match &self.inner.transport {
            Transport::Sim => {
                let latency = self.latency_us();
                self.schedule_in(latency, move |net| {
                    net.deliver_local(&authority, &framed, on_reply, latency);
                });
            }
            Transport::Tcp { routes } => {
                if self.inner.blocked.borrow().contains(&authority) {
                    return;
                }
                if self.inner.services.borrow().contains_key(&authority) {
                    // Local shortcut: same process, no socket needed.
                    self.deliver_local(&authority, &framed, on_reply, 0);
                    return;
                }
                let addr = routes
                    .borrow()
                    .get(&authority)
                    .unwrap_or_else(|| panic!("no route to authority {authority:?}"))
                    .clone();
                let injector = self.inner.injector.borrow().clone();
                match (on_reply, injector) {
                    // Never block the serving loop on a sibling process's
                    // handler: two processes posting to each other
                    // synchronously would deadlock. Fire-and-forget posts
                    // complete on a detached thread.
                    (None, _) => {
                        std::thread::spawn(move || {
                            let _ = http_exchange(&addr, &framed);
                        });
                    }
                    // Reply wanted and a server loop is running: park the
                    // callback, do the exchange off-thread, and deliver the
                    // response back through the loop's channel.
                    (Some(cb), Some(tx)) => {
                        let token = self.inner.next_reply_token.get();
                        self.inner.next_reply_token.set(token + 1);
                        self.inner.parked_replies.borrow_mut().insert(token, cb);
                        std::thread::spawn(move || {
                            let bytes = http_exchange(&addr, &framed).ok();
                            let _ = tx.send(Injected::ReplyReady { token, bytes });
                        });
                    }
                    // No loop to re-enter (plain client): synchronous
                    // exchange, callback runs inline.
                    (Some(cb), None) => {
                        let resp_bytes = http_exchange(&addr, &framed)
                            .unwrap_or_else(|e| panic!("socket exchange with {authority}: {e}"));
                        let resp = parse_http_response(&resp_bytes)
                            .unwrap_or_else(|e| panic!("bad response from {authority}: {e}"));
                        cb(self, resp);
                    }
                }
            }
        }
    }

    /// Delivers framed request bytes to a locally registered service and
    /// routes the response back. `reply_latency_us` is zero on the socket
    /// transport (the network already happened).
    fn deliver_local(
        &self,
        authority: &str,
        framed: &[u8],
        on_reply: Option<ReplyFn>,
        reply_latency_us: u64,
    ) {
        if self.inner.blocked.borrow().contains(authority) {
            return;
        }
        let svc = self
            .inner
            .services
            .borrow()
            .get(authority)
            .unwrap_or_else(|| panic!("no service registered for authority {authority:?}"))
            .clone();
        let req = parse_http_request(framed)
            .unwrap_or_else(|e| panic!("delivered request failed to parse: {e}"));
        let resp_bytes = svc.handle(self, req);
        if let Some(cb) = on_reply {
            let resp = parse_http_response(&resp_bytes)
                .unwrap_or_else(|e| panic!("response from {authority} failed to parse: {e}"));
            if reply_latency_us == 0 {
                cb(self, resp);
            } else {
                self.schedule_in(reply_latency_us, move |net| cb(net, resp));
            }
        }
    }

    /// Dispatches raw request bytes that arrived over a socket to the
    /// local service named by the Host header; returns response bytes.
    pub fn dispatch_socket_request(&self, bytes: &[u8]) -> Vec<u8> {
        let req = match parse_http_request(bytes) {
            Ok(r) => r,
            Err(e) => {
                return frame_http_response(
                    400,
                    "Bad Request",
                    Some("application/json"),
                    format!(r#"{{"error":"malformed request","detail":"{e}"}}"#).as_bytes(),
                )
            }
        };
        let Some(host) = req.headers.get("host").cloned() else {
            return frame_http_response(
                400,
                "Bad Request",
                Some("application/json"),
                br#"{"error":"missing host header","detail":""}"#,
            );
        };
        if self.inner.blocked.borrow().contains(&host) {
            // A blocked authority behaves as if the process were gone.
            return frame_http_response(
                503,
                "Service Unavailable",
                Some("application/json"),
                br#"{"error":"authority blocked","detail":""}"#,
            );
        }
        let svc = self.inner.services.borrow().get(&host).cloned();
        match svc {
            Some(svc) => svc.handle(self, req),
            None => frame_http_response(
                404,
                "Not Found",
                Some("application/json"),
                format!(r#"{{"error":"unknown authority","detail":"{host}"}}"#).as_bytes(),
            ),
        }
    }

    /// Runs queued events to exhaustion as fast as possible. Returns the
    /// final scenario time in microseconds.
    pub fn run_virtual(&self) -> u64 {
        loop {
            let job = match self.inner.sched.borrow_mut().pop() {
                Some(j) => j,
                None => break,
            };
            self.inner.sched.borrow_mut().now_us = job.t_us;
            (job.task)(self);
        }
        self.inner.sched.borrow().now_us
    }

    /// Runs queued events to exhaustion, pacing execution so one scenario
    /// second takes one wall second.
    pub fn run_paced(&self) -> u64 {
        let wall0 = Instant::now();
        let t0 = self.inner.sched.borrow().now_us;
        loop {
            let job = match self.inner.sched.borrow_mut().pop() {
                Some(j) => j,
                None => break,
            };
            let due = Duration::from_micros(job.t_us - t0);
            let elapsed = wall0.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
            self.inner.sched.borrow_mut().now_us = job.t_us;
            (job.task)(self);
        }
        self.inner.sched.borrow().now_us
    }
}

// ---------------------------------------------------------------------------
// Socket transport plumbing
// ---------------------------------------------------------------------------

/// Messages fed into a process's server loop by acceptor threads and by
/// the exchange workers spawned for posts that want a reply.
pub enum Injected {
    /// One complete HTTP request; the response goes back through `reply`.
    Request { bytes: Vec<u8>, reply: mpsc::Sender<Vec<u8>> },
    /// A socket exchange finished; `token` names the parked reply callback
    /// and `bytes` the raw response (`None` if the exchange failed, which
    /// drops the reply exactly like a blocked authority would).
    ReplyReady { token: u64, bytes: Option<Vec<u8>> },
    /// Drain remaining due events and exit the loop.
    Shutdown,
}

/// Reads one complete HTTP message (headers + declared body) from a stream.
pub fn read_http_message(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(512);
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(total) = total_message_len(&buf) {
            if buf.len() >= total {
                if buf.len() > total {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        "trailing bytes after message",
                    ));
                }
                return Ok(buf);
            }
        }
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "connection closed mid-message",
            ));
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

/// One-shot HTTP exchange over TCP: connect, send framed request bytes,
/// read one response message.
pub fn http_exchange(addr: &str, framed: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut stream = TcpStream::connect(addr)?;
    stream.write_all(framed)?;
    stream.flush()?;
    read_http_message(&mut stream)
}

/// Accepts connections and feeds complete requests into `tx`, one
/// connection-handling thread each. Exits when the listener errors or the
/// receiving loop has gone away.
pub fn spawn_http_acceptor(
    listener: TcpListener,
    tx: mpsc::Sender<Injected>,
) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(mut stream) = conn else { break };
            let tx = tx.clone();
            std::thread::spawn(move || {
                let Ok(bytes) = read_http_message(&mut stream) else { return };
                let (reply_tx, reply_rx) = mpsc::channel();
                if tx.send(Injected::Request { bytes, reply: reply_tx }).is_err() {
                    return;
                }
                let Ok(resp) = reply_rx.recv() else { return };
                let _ = stream.write_all(&resp);
                let _ = stream.flush();
            });
        }
    })
}

/// Server loop for one process of a multi-process run: interleaves due
/// scheduled events (by wall clock) with requests injected from acceptor
/// threads, until a [`Injected::Shutdown`] arrives.
pub fn run_server_loop(net: &NetHandle, rx: &mpsc::Receiver<Injected>) {
    loop {
        let now = wall_epoch_us();
        let next_due = net.inner.sched.borrow().peek_t();
        let injected = match next_due {
            Some(t) if t <= now => match rx.try_recv() {
                Ok(i) => Some(i),
                Err(mpsc::TryRecvError::Empty) => None,
                Err(mpsc::TryRecvError::Disconnected) => return,
            },
            Some(t) => match rx.recv_timeout(Duration::from_micros(t - now)) {
                Ok(i) => Some(i),
                Err(mpsc::RecvTimeoutError::Timeout) => None,
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            },
            None => match rx.recv() {
                Ok(i) => Some(i),
                Err(_) => return,
            },
        };
        match injected {
            Some(Injected::Request { bytes, reply }) => {
                let resp = net.dispatch_socket_request(&bytes);
                let _ = reply.send(resp);
            }
            Some(Injected::ReplyReady { token, bytes }) => {
                let cb = net.inner.parked_replies.borrow_mut().remove(&token);
                if let (Some(cb), Some(bytes)) = (cb, bytes) {
                    match parse_http_response(&bytes) {
                        Ok(resp) => cb(net, resp),
                        Err(_) => {} // unparsable response: drop the reply
                    }
                }
            }
            Some(Injected::Shutdown) => return,
            None => {
                // The head job is due; run it.
                let job = net.inner.sched.borrow_mut().pop();
                if let Some(job) = job {
                    (job.task)(net);
                }
            }
        }
    }
}
