use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use pixint_core::image::protocol::{
    external_oracle_client, serve_tcp, ClientConfig, Endpoint, ExternalClassifier, Message, ServeOptions,
};
use pixint_core::image::{builtin_mlp_model, Classifier, ImageShape, ImageTensor, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: ImageShape = ImageShape { height: 8, width: 8, channels: 3 };

fn images(count: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ImageTensor::new(SHAPE, (0..SHAPE.len()).map(|_| rng.random::<f32>() as f64).collect()).unwrap())
        .collect()
}

fn serve_model(model: Arc<dyn Classifier>, opts: ServeOptions) -> Endpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve_tcp(listener, model, opts));
    Endpoint::Tcp(addr.to_string())
}

/// A bridge whose behavior is scripted per connection and per request line.
fn scripted<F>(script: F) -> Endpoint
where
    F: Fn(usize, Message) -> Option<String> + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let script = Arc::new(script);
    std::thread::spawn(move || {
        let conns = AtomicUsize::new(0);
        for stream in listener.incoming() {
            let stream: TcpStream = stream.unwrap();
            let k = conns.fetch_add(1, Ordering::SeqCst);
            let script = script.clone();
            std::thread::spawn(move || {
                let mut out = stream.try_clone().unwrap();
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { return };
                    let msg: Message = serde_json::from_str(&line).unwrap();
                    match script(k, msg) {
                        Some(reply) => {
                            if out.write_all(reply.as_bytes()).and_then(|_| out.write_all(b"\n")).is_err() {
                                return;
                            }
                        }
                        None => return,
                    }
                }
            });
        }
    });
    Endpoint::Tcp(addr.to_string())
}

fn ack() -> String {
    r#"{"type":"hello_ack","version":1,"num_classes":2,"input_shape":[8,8,3]}"#.to_string()
}

fn connect(endpoint: Endpoint, timeout: Duration) -> Result<ExternalClassifier, ModelError> {
    external_oracle_client(ClientConfig { endpoint, timeout })
}

#[test]
fn remote_predictions_match_local_ones() {
    let model = Arc::new(builtin_mlp_model(4, SHAPE, 16, 3));
    let client = connect(serve_model(model.clone(), ServeOptions::default()), Duration::from_secs(10)).unwrap();
    assert_eq!(client.num_classes(), 4);
    assert_eq!(client.input_shape(), SHAPE);
    let xs = images(7, 1);
    let refs: Vec<&ImageTensor> = xs.iter().collect();
    let remote = client.predict_batch(&refs).unwrap();
    let local = model.predict_batch(&refs).unwrap();
    assert_eq!(remote.len(), 7);
    for (r, l) in remote.iter().zip(&local) {
        for (a, b) in r.iter().zip(l) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    let g_remote = client.loss_gradient(&xs[0], 2).unwrap();
    let g_local = model.loss_gradient(&xs[0], 2).unwrap();
    for (a, b) in g_remote.iter().zip(&g_local) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
    }
}

#[test]
fn batches_come_back_in_request_order() {
    let model = Arc::new(builtin_mlp_model(3, SHAPE, 8, 9));
    let client = connect(serve_model(model.clone(), ServeOptions::default()), Duration::from_secs(10)).unwrap();
    let xs = images(5, 2);
    let forward: Vec<&ImageTensor> = xs.iter().collect();
    let backward: Vec<&ImageTensor> = xs.iter().rev().collect();
    let a = client.predict_batch(&forward).unwrap();
    let mut b = client.predict_batch(&backward).unwrap();
    b.reverse();
    assert_eq!(a, b);
}

#[test]
fn version_mismatch_is_rejected_at_handshake() {
    let model = Arc::new(builtin_mlp_model(2, SHAPE, 4, 1));
    let endpoint = serve_model(model, ServeOptions { version: 99 });
    match connect(endpoint, Duration::from_secs(10)) {
        Err(ModelError::VersionMismatch { expected: 1, got: 99 }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake should fail"),
    }
}

#[test]
fn malformed_replies_are_protocol_errors() {
    let endpoint = scripted(|_, msg| match msg {
        Message::Hello { .. } => Some(ack()),
        _ => Some("this is not json".into()),
    });
    let client = connect(endpoint, Duration::from_secs(10)).unwrap();
    let xs = images(1, 3);
    assert!(matches!(client.predict(&xs[0]), Err(ModelError::Protocol(_))));
}

#[test]
fn wrong_number_of_probability_vectors_is_rejected() {
    let endpoint = scripted(|_, msg| match msg {
        Message::Hello { .. } => Some(ack()),
        Message::Eval { id, .. } => Some(format!(r#"{{"type":"eval_ok","id":{id},"probs":[[0.5,0.5]]}}"#)),
        _ => None,
    });
    let client = connect(endpoint, Duration::from_secs(10)).unwrap();
    let xs = images(3, 4);
    let refs: Vec<&ImageTensor> = xs.iter().collect();
    assert!(matches!(client.predict_batch(&refs), Err(ModelError::Protocol(_))));
}

#[test]
fn remote_errors_surface_with_their_message() {
    let endpoint = scripted(|_, msg| match msg {
        Message::Hello { .. } => Some(ack()),
        Message::Eval { id, .. } => Some(format!(r#"{{"type":"error","id":{id},"message":"out of memory"}}"#)),
        _ => None,
    });
    let client = connect(endpoint, Duration::from_secs(10)).unwrap();
    match client.predict(&images(1, 5)[0]) {
        Err(ModelError::Remote(m)) => assert_eq!(m, "out of memory"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn silent_bridge_times_out() {
    let endpoint = scripted(|_, msg| match msg {
        Message::Hello { .. } => Some(ack()),
        // read the request, never answer
        _ => {
            std::thread::sleep(Duration::from_secs(3));
            None
        }
    });
    let client = connect(endpoint, Duration::from_millis(200)).unwrap();
    let start = Instant::now();
    assert!(matches!(client.predict(&images(1, 6)[0]), Err(ModelError::Timeout(_))));
    // one retry, then give up
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn dropped_connection_is_retried_once() {
    let endpoint = scripted(|conn, msg| match msg {
        Message::Hello { .. } => Some(ack()),
        Message::Eval { id, .. } if conn > 0 => {
            Some(format!(r#"{{"type":"eval_ok","id":{id},"probs":[[0.25,0.75]]}}"#))
        }
        _ => None,
    });
    let client = connect(endpoint, Duration::from_secs(10)).unwrap();
    assert_eq!(client.predict(&images(1, 7)[0]).unwrap(), vec![0.25, 0.75]);
}
