"""pairflow: contextual pair-flow compilation and C&C traffic classification."""

from .features import (ContextFeaturizer, FeatureVector, apply_mode_mask,
                       build_sma, destination_features, flow_features,
                       host_features, idle_time_features, mask_table, mtdsc,
                       sma_features, url_features)
from .flows import (assign_flow_id, attach_dns, encapsulate, hygiene_filter,
                    parse_url_record, separate_planes, track_pairs)
from .forest import ModelArtifact, PairForestClassifier, predict, train
from .ingest import CaptureDecoder, decode_capture, window_buffer
from .metrics import EvalReport, evaluate, feature_report, group_split
from .pipeline import PipelineConfig, compile_captures, featurize_flows, run_fused
from .profiles import pivot_profiles
from .records import (CaptureLabel, ClassLabel, FlowId, PairFlow, PairKey,
                      PlanePoint, RawPacket, UrlRecord)
from .summary import (Blacklist, ContextualSummary, SummaryRegistry,
                      blacklist_check, update_flags, update_numeric,
                      update_ua_store, upsert_summary)
from .synth import ScenarioSpec, default_corpus_specs, generate_corpus
from .variants import export_variant, read_http_variant

__version__ = "0.1.0"
