# Core detection pipeline components
