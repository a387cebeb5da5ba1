import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Output Configuration
    OUTPUT_DIR = os.getenv("FRACPLAP_OUTPUT_DIR")
    LOG_LEVEL = os.getenv("FRACPLAP_LOG_LEVEL", "INFO")
    
    # Solver Configuration
    MAX_ITER = int(os.getenv("FRACPLAP_MAX_ITER", "20000"))
    TOL = float(os.getenv("FRACPLAP_TOL", "1e-8"))
    STEP = float(os.getenv("FRACPLAP_STEP", "0.1"))
    SEED = int(os.getenv("FRACPLAP_SEED", "0"))
    
    # Grid Configuration
    COLLAR_CELLS = int(os.getenv("FRACPLAP_COLLAR_CELLS", "4"))
    
    # Check Configuration
    LIMIT_TOL = float(os.getenv("FRACPLAP_LIMIT_TOL", "0.15"))
    PROFILE_TOL = float(os.getenv("FRACPLAP_PROFILE_TOL", "0.05"))
    LAYER_K = int(os.getenv("FRACPLAP_LAYER_K", "3"))
    
    @classmethod
    def validate(cls):
        """Validate that the numeric settings are usable"""
        invalid_vars = []
        
        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            invalid_vars.append("FRACPLAP_LOG_LEVEL")
        if cls.MAX_ITER < 1:
            invalid_vars.append("FRACPLAP_MAX_ITER")
        if not cls.TOL > 0:
            invalid_vars.append("FRACPLAP_TOL")
        if not 0 < cls.STEP <= 1:
            invalid_vars.append("FRACPLAP_STEP")
        if cls.COLLAR_CELLS < 2:
            invalid_vars.append("FRACPLAP_COLLAR_CELLS")
        if not cls.LIMIT_TOL >= 0 or not cls.PROFILE_TOL >= 0:
            invalid_vars.append("FRACPLAP_LIMIT_TOL/FRACPLAP_PROFILE_TOL")
        if cls.LAYER_K < 0:
            invalid_vars.append("FRACPLAP_LAYER_K")
        
        if invalid_vars:
            raise ValueError(f"Invalid environment variables: {', '.join(invalid_vars)}")
        
        return True
