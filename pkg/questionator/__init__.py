import logging
import re

VERSION = "1.0.0-dev"
root_logger = logging.getLogger("questionator")

questionator_version_info = tuple(re.split(r"\.|-", VERSION))
