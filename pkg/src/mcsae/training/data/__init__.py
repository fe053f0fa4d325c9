from .datamodule import SpeakerDataModule
from .datasetbase import SpeakerDatasetBase
from .featuredir import FeatureDirDataset, scan_feature_dir
from .synthetic import SynthSpec, SyntheticCorpus, SyntheticDataset, export_heldout, gen_synthetic, synthetic_ids
