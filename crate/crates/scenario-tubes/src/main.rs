fn main() {
    std::process::exit(scenario_tubes::cli::main_with_exit_code() as i32);
}
