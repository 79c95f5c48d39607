"""Content-aware tiling of pathology whole-slide images with artifact QC."""

from .config import PipelineConfig, config_from_dict, load_config
from .metrics import ConfusionMatrix3, agreement, dice, export_review, prf, tile_class
from .penmark import (PenClass, PenRules, PenStats, PenThresholds, classify_pen,
                      clean_tile, filter_sets, pen_stats)
from .pipeline import run_pipeline
from .report import (RunStats, TileRecord, compose_wsi_mask, qt_gain, render_mask,
                     standard_baseline, write_outputs)
from .segmenter import (HeuristicParams, SegBackendConfig, Segmenter,
                        close_small_background, heuristic_segment, segment_tile)
from .selector import ArtifactFractions, Selection, Weights, cost, fractions, select_tile
from .slide_io import RegionSpec, SlideImage, open_slide, read_region, thumbnail
from .synthgen import SynthSpec, gen_slide, generate
from .tiling import TileGrid, TileRef, TileSet, extract_sets, neighbors_for, plan_grid
from .tissue import TissueROI, compute_tissue_mask, otsu_threshold, roi_from_mask

__version__ = "0.1.0"
