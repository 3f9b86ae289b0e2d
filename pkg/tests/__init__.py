"""測試配置"""

import pytest
