from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    CFL_TARGET: float = 0.9  # must stay below 1 for the explicit scheme
    DT_CAP: float = 1.0  # returned when a cell has zero wave speed
    PROBE_PERIOD: float = 0.001  # ready-count sampling period (s)
    PRIORITY_LEVELS: int = 5  # scheduler queues 0..PRIORITY_LEVELS-1
    DEBUG_CHECKS: bool = False  # time consistency + write contract assertions

    # Socket transport
    SOCKET_HOST: str = "127.0.0.1"
    SOCKET_BASE_PORT: int = 47000
    SOCKET_CONNECT_TIMEOUT: float = 10.0
    RECV_TIMEOUT: float = 60.0  # pending receives fail after this many seconds (0 disables)

    model_config = SettingsConfigDict(
        env_prefix="LTS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()
