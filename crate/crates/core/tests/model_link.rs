//! Batched sweep traces against one-session-at-a-time HARQ runs on
//! freshly initialised models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiking_harq::backbone::{Backbone, BackboneConfig, Feature};
use spiking_harq::channel::ChannelModel;
use spiking_harq::codec::{Codec, CodecConfig};
use spiking_harq::harq::{batch_traces, bandwidth_of, run_session, ModelLink, Models};
use spiking_harq::simnet::{SimNet, SimNetConfig};
use spiking_harq::tensor::Tensor;

#[test]
fn batched_traces_equal_single_sessions() {
    let backbone = Backbone::init(&BackboneConfig::default(), 8, 4).unwrap();
    let codec = Codec::init(&CodecConfig::default(), backbone.feature_shape()).unwrap();
    let simnet = SimNet::init(&SimNetConfig::default(), backbone.feature_shape()).unwrap();
    let models = Models {
        backbone: &backbone,
        codec: &codec,
        simnet: &simnet,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let images = Tensor::new(vec![5, 1, 8, 8], (0..320).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let features = backbone.extract_features_batch(&images).unwrap();
    let sessions = [3u64, 0, 17, 4, 9];

    for ber in [0.0, 0.15] {
        let channel = ChannelModel::new(ber, 77).unwrap();
        let traces = batch_traces(models, &features, &channel, &sessions).unwrap();
        let mut thetas: Vec<f64> = traces.iter().flat_map(|t| t.scores.iter().copied()).collect();
        thetas.extend([-1.0, 1.0]);
        for (i, trace) in traces.iter().enumerate() {
            let f = Feature::new(features.slice_batch(i, i + 1).unwrap().reshaped(&backbone.feature_shape()).unwrap()).unwrap();
            for &theta in &thetas {
                let cfg = models.harq_config(theta);
                let mut link = ModelLink::new(models, f.clone(), channel, sessions[i]).unwrap();
                let s = run_session(&mut link, &cfg).unwrap();
                assert_eq!(s.final_t, trace.final_t(theta), "ber {ber} row {i} theta {theta}");
                assert_eq!(s.final_prediction.as_ref().unwrap().class(), trace.prediction_at(s.final_t));
                assert_eq!(s.total_bits, bandwidth_of(&s));
                for r in &s.rounds {
                    assert_eq!(r.score, trace.scores[r.step - trace.t0]);
                }
            }
        }
    }
}
