from .speakernet import SpeakerNet, EmbeddingHead, encoding_dim, extract_embedding, tap_dims
from .loaders import load_model, save_model, state_fingerprint
from .masking import RandomMask, mask_gate, sample_mask
from .mcsae import Mcsae, McsaeStage, build_attention_matrix, concat_embedding, cross_branch, transform_layer
from .pooling import SapHead, sap_pool, sap_weights, scaled_dot_attention
from .resnet import ResNetBackbone, ResidualBlock, count_parameters, output_extent
