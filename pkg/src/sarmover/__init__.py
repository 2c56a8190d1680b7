"""Single-channel spotlight SAR toolbox for a circular trajectory:
echo simulation, brute-force and fast multi-level backprojection,
road-restricted moving-target detection, and matched-filter cleaning."""

from .backproj import (
    OutputTooLargeError,
    ReflectivityImage,
    amplitude_factor,
    direct_dynamic,
    direct_static,
)
from .echo import ISOTROPIC, AntennaPattern, FormatError, RangeProfile, simulate
from .geometry import (
    EPS_ALPHA,
    SPEED_OF_LIGHT,
    AxisView,
    DegenerateAngleError,
    ImagingGrid,
    RadarConfig,
    RoadFrame,
    antenna_position,
    pinned_axis,
    rotate_antenna,
    slant_range,
    unrotate_point,
)
from .mldd import (
    CoarseImage,
    CoarsePeak,
    DetectionMatrix,
    MlddConfig,
    MlddResult,
    RefinedPeak,
    RunAxes,
    SubdomainMeta,
    aggregate_level,
    base_image,
    detection_matrix,
    find_local_maxima,
    interpolate,
    partition,
    phase_ref,
    run,
    upgrade_resolution,
)
from .pipeline import (
    Detection,
    PipelineConfig,
    Report,
    clean,
    detect_full_grid,
    full_run,
    refine_matched,
    road_based_detect,
    static_image,
)
from .roaddet import (
    GrayImage,
    RoadDetParams,
    RoadLine,
    canny,
    connected_components_filter,
    detect_roads,
    dilate_disk,
    hough,
    hough_peaks,
    mean_shift_cluster,
    normalize,
    pixel_to_world,
    world_to_pixel,
)
from .scene import (
    ClutterSpec,
    PointTarget,
    RoadSpec,
    Scene,
    SceneParseError,
    SceneValidationError,
    ZeroClutterError,
    generate_clutter,
    load_scene,
    load_scene_file,
    road_mask,
    scr_static,
)

__version__ = "0.1.0"
