//! Deterministic generator for the bundled mini-corpus.
//!
//! Synthesizes Ansible role trees whose task names and bodies share
//! app-identity tokens and whose per-variant phrasing correlates with
//! body structure, so the pipeline has a learnable signal. Output is a
//! pure function of the seed; the committed corpus under `corpus/mini`
//! was produced by this tool.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Parser)]
#[command(name = "gen-corpus", about = "Regenerate the bundled mini-corpus")]
struct Options {
    /// Output directory (created if missing).
    #[arg(long, default_value = "corpus/mini")]
    out: PathBuf,

    /// Generator seed.
    #[arg(long, default_value_t = 20260810)]
    seed: u64,
}

const APPS: [&str; 72] = [
    "nginx",
    "redis",
    "postgresql",
    "mysql",
    "mariadb",
    "mongodb",
    "rabbitmq",
    "kafka",
    "zookeeper",
    "elasticsearch",
    "kibana",
    "logstash",
    "grafana",
    "prometheus",
    "alertmanager",
    "haproxy",
    "keepalived",
    "memcached",
    "etcd",
    "consul",
    "vault",
    "nomad",
    "docker",
    "containerd",
    "kubelet",
    "jenkins",
    "gitlab",
    "gitea",
    "sonarqube",
    "minio",
    "ceph",
    "glusterfs",
    "samba",
    "bind",
    "dnsmasq",
    "unbound",
    "openvpn",
    "wireguard",
    "strongswan",
    "squid",
    "varnish",
    "apache",
    "tomcat",
    "jetty",
    "php-fpm",
    "uwsgi",
    "gunicorn",
    "celery",
    "airflow",
    "datadog-agent",
    "telegraf",
    "influxdb",
    "fluentd",
    "filebeat",
    "metricbeat",
    "auditbeat",
    "rsyslog",
    "chrony",
    "sshd",
    "fail2ban",
    "ufw",
    "firewalld",
    "postfix",
    "dovecot",
    "opendkim",
    "clamav",
    "spamassassin",
    "openldap",
    "slapd",
    "netdata",
    "cadvisor",
    "registry",
];

struct TaskSpec {
    name: String,
    module: &'static str,
    /// Indented parameter lines, already YAML-formatted.
    body: Vec<String>,
    when: Option<String>,
    loop_expr: Option<String>,
    notify: Option<String>,
}

fn pick<'a>(rng: &mut ChaCha12Rng, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

fn quote(value: &str) -> String {
    let plain_safe = !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_./-".contains(c));
    if plain_safe {
        value.to_string()
    } else {
        format!("\"{}\"", value.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

fn maybe_when(rng: &mut ChaCha12Rng) -> Option<String> {
    if rng.random::<f64>() < 0.12 {
        Some(
            pick(
                rng,
                &[
                    "ansible_os_family == 'Debian'",
                    "ansible_os_family == 'RedHat'",
                    "not ansible_check_mode",
                    "deploy_env == 'production'",
                ],
            )
            .to_string(),
        )
    } else {
        None
    }
}

fn template_task(app: &str, variant: usize, rng: &mut ChaCha12Rng) -> TaskSpec {
    match variant {
        0 => {
            let verb = pick(rng, &["Deploy", "Install", "Create", "Update"]);
            let noun = pick(
                rng,
                &["configuration file", "config file", "configuration", "main config"],
            );
            let owner = pick(rng, &["root", app]);
            let mode = pick(rng, &["0644", "0640"]);
            let mut body = vec![
                format!("src: {}", quote(&format!("{app}.conf.j2"))),
                format!("dest: {}", quote(&format!("/etc/{app}/{app}.conf"))),
                format!("owner: {}", quote(owner)),
                format!("group: {}", quote(owner)),
                format!("mode: \"{mode}\""),
                "backup: true".to_string(),
            ];
            if rng.random::<f64>() < 0.5 {
                body.push(format!("validate: {}", quote(&format!("{app} -t -c %s"))));
            }
            TaskSpec {
                name: format!("{verb} {app} {noun}"),
                module: "template",
                body,
                when: maybe_when(rng),
                loop_expr: None,
                notify: Some(format!("restart {app}")),
            }
        }
        1 => {
            let verb = pick(rng, &["Generate", "Write", "Install"]);
            let noun = pick(rng, &["systemd unit", "systemd service file", "unit file"]);
            TaskSpec {
                name: format!("{verb} {app} {noun}"),
                module: "template",
                body: vec![
                    format!("src: {}", quote(&format!("{app}.service.j2"))),
                    format!(
                        "dest: {}",
                        quote(&format!("/etc/systemd/system/{app}.service"))
                    ),
                    "mode: \"0644\"".to_string(),
                    "force: true".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: Some("reload systemd".to_string()),
            }
        }
        2 => {
            let verb = pick(rng, &["Render", "Set up", "Provision"]);
            let noun = pick(rng, &["logrotate rules", "log rotation policy", "logrotate config"]);
            TaskSpec {
                name: format!("{verb} {noun} for {app}"),
                module: "template",
                body: vec![
                    format!("src: {}", quote(&format!("logrotate-{app}.j2"))),
                    format!("dest: {}", quote(&format!("/etc/logrotate.d/{app}"))),
                    "owner: root".to_string(),
                    "mode: \"0444\"".to_string(),
                    "lstrip_blocks: true".to_string(),
                    "trim_blocks: true".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
        _ => {
            let verb = pick(rng, &["Deploy", "Publish"]);
            let noun = pick(rng, &["vhost", "site config", "virtual host"]);
            TaskSpec {
                name: format!("{verb} {app} {noun}"),
                module: "template",
                body: vec![
                    format!("src: {}", quote(&format!("{app}-vhost.conf.j2"))),
                    format!(
                        "dest: {}",
                        quote(&format!("/etc/{app}/sites-available/{app}.conf"))
                    ),
                    format!("owner: {}", quote(app)),
                    "mode: \"0644\"".to_string(),
                    "follow: true".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: Some(format!("reload {app}")),
            }
        }
    }
}

fn file_task(app: &str, variant: usize, rng: &mut ChaCha12Rng) -> TaskSpec {
    let path_key = if rng.random::<f64>() < 0.8 { "path" } else { "dest" };
    match variant {
        0 => {
            let verb = pick(rng, &["Create", "Ensure", "Make"]);
            let noun = pick(
                rng,
                &["data directory", "state directory", "config directory", "log directory"],
            );
            let base = match noun {
                "config directory" => format!("/etc/{app}"),
                "log directory" => format!("/var/log/{app}"),
                _ => format!("/var/lib/{app}"),
            };
            let use_loop = rng.random::<f64>() < 0.1;
            let mut body = Vec::new();
            if use_loop {
                body.push(format!("{path_key}: \"{{{{ item }}}}\""));
            } else {
                body.push(format!("{path_key}: {}", quote(&base)));
            }
            body.push("state: directory".to_string());
            body.push(format!("owner: {}", quote(app)));
            body.push(format!("group: {}", quote(app)));
            body.push(format!("mode: \"{}\"", pick(rng, &["0755", "0750"])));
            TaskSpec {
                name: format!("{verb} {app} {noun}"),
                module: "file",
                body,
                when: maybe_when(rng),
                loop_expr: use_loop.then(|| {
                    format!("[/var/lib/{app}, /var/log/{app}]")
                }),
                notify: None,
            }
        }
        1 => {
            let verb = pick(rng, &["Remove", "Delete", "Clean up"]);
            let noun = pick(
                rng,
                &["legacy config", "stale lockfile", "old state file", "obsolete snippet"],
            );
            let target = match noun {
                "stale lockfile" => format!("/var/run/{app}.lock"),
                "old state file" => format!("/var/lib/{app}/state.old"),
                "obsolete snippet" => format!("/etc/{app}/conf.d/legacy.conf"),
                _ => format!("/etc/{app}/{app}.conf.old"),
            };
            TaskSpec {
                name: format!("{verb} {noun} of {app}"),
                module: "file",
                body: vec![
                    format!("{path_key}: {}", quote(&target)),
                    "state: absent".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
        2 => {
            let verb = pick(rng, &["Link", "Symlink"]);
            TaskSpec {
                name: format!("{verb} {app} binary into place"),
                module: "file",
                body: vec![
                    format!("src: {}", quote(&format!("/opt/{app}/current/bin/{app}"))),
                    format!("{path_key}: {}", quote(&format!("/usr/local/bin/{app}"))),
                    "state: link".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
        _ => {
            let noun = pick(rng, &["maintenance marker", "flag file", "ready marker"]);
            TaskSpec {
                name: format!("Touch {app} {noun}"),
                module: "file",
                body: vec![
                    format!("{path_key}: {}", quote(&format!("/var/run/{app}.marker"))),
                    "state: touch".to_string(),
                    "mode: \"0600\"".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
    }
}

fn service_task(app: &str, variant: usize, rng: &mut ChaCha12Rng) -> TaskSpec {
    match variant {
        0 => {
            let name = match rng.random_range(0..3) {
                0 => format!("Enable and start {app} service"),
                1 => format!("Ensure {app} is running"),
                _ => format!("Start {app} on boot"),
            };
            let mut body = vec![
                format!("name: {}", quote(app)),
                "state: started".to_string(),
                "enabled: true".to_string(),
            ];
            if rng.random::<f64>() < 0.2 {
                body.push("daemon_reload: true".to_string());
            }
            TaskSpec {
                name,
                module: "service",
                body,
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
        1 => {
            let name = match rng.random_range(0..3) {
                0 => format!("Stop and disable {app}"),
                1 => format!("Ensure {app} is stopped"),
                _ => format!("Disable {app} service"),
            };
            TaskSpec {
                name,
                module: "service",
                body: vec![
                    format!("name: {}", quote(app)),
                    "state: stopped".to_string(),
                    "enabled: false".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
        _ => {
            let name = match rng.random_range(0..3) {
                0 => format!("Restart {app} service"),
                1 => format!("Bounce {app} after config change"),
                _ => format!("Restart {app} workers"),
            };
            TaskSpec {
                name,
                module: "service",
                body: vec![
                    format!("name: {}", quote(app)),
                    "state: restarted".to_string(),
                ],
                when: maybe_when(rng),
                loop_expr: None,
                notify: None,
            }
        }
    }
}

fn copy_task(app: &str, rng: &mut ChaCha12Rng) -> TaskSpec {
    let noun = pick(rng, &["binary", "helper script", "sysconfig defaults"]);
    let (src, dest) = match noun {
        "helper script" => (
            format!("files/{app}-helper.sh"),
            format!("/usr/local/sbin/{app}-helper"),
        ),
        "sysconfig defaults" => (
            format!("files/{app}.sysconfig"),
            format!("/etc/default/{app}"),
        ),
        _ => (format!("files/{app}/{app}"), format!("/usr/local/bin/{app}")),
    };
    TaskSpec {
        name: format!("Copy {app} {noun}"),
        module: "copy",
        body: vec![
            format!("src: {}", quote(&src)),
            format!("dest: {}", quote(&dest)),
            "owner: root".to_string(),
            format!("mode: \"{}\"", pick(rng, &["0755", "0644"])),
        ],
        when: maybe_when(rng),
        loop_expr: None,
        notify: None,
    }
}

fn debug_task(app: &str, rng: &mut ChaCha12Rng) -> TaskSpec {
    let what = pick(rng, &["status", "version", "listen address"]);
    TaskSpec {
        name: format!("Show {app} {what}"),
        module: "debug",
        body: vec![format!(
            "msg: \"{app} {what} on {{{{ inventory_hostname }}}}\""
        )],
        when: maybe_when(rng),
        loop_expr: None,
        notify: None,
    }
}

fn command_task(app: &str, rng: &mut ChaCha12Rng) -> TaskSpec {
    let action = pick(rng, &["healthcheck", "migration", "cache warmup"]);
    let cmd = match action {
        "migration" => format!("{app}-manage migrate --no-input"),
        "cache warmup" => format!("{app}ctl warmup --all"),
        _ => format!("{app}ctl check --verbose"),
    };
    TaskSpec {
        name: format!("Run {app} {action}"),
        module: "command",
        body: Vec::new(),
        when: maybe_when(rng),
        loop_expr: None,
        notify: None,
    }
    .with_free_form(cmd)
}

impl TaskSpec {
    fn with_free_form(mut self, cmd: String) -> Self {
        // Free-form module: the whole command is the module value.
        self.body = vec![format!("__free_form__{cmd}")];
        self
    }

    fn emit(&self, out: &mut String, indent: &str) {
        out.push_str(&format!("{indent}- name: {}\n", self.name));
        let free_form = self
            .body
            .first()
            .and_then(|line| line.strip_prefix("__free_form__"));
        if let Some(cmd) = free_form {
            out.push_str(&format!("{indent}  {}: {}\n", self.module, cmd));
        } else {
            out.push_str(&format!("{indent}  {}:\n", self.module));
            for line in &self.body {
                out.push_str(&format!("{indent}    {line}\n"));
            }
        }
        if let Some(when) = &self.when {
            out.push_str(&format!("{indent}  when: {}\n", quote(when)));
        }
        if let Some(loop_expr) = &self.loop_expr {
            out.push_str(&format!("{indent}  loop: {loop_expr}\n"));
        }
        if let Some(notify) = &self.notify {
            out.push_str(&format!("{indent}  notify: {notify}\n"));
        }
    }
}

fn write_file(path: &Path, content: &str) {
    fs::create_dir_all(path.parent().expect("parent")).expect("create dirs");
    fs::write(path, content).expect("write corpus file");
}

fn main() {
    let options = Options::parse();
    let mut rng = ChaCha12Rng::seed_from_u64(options.seed);

    let mut total = 0usize;
    for (idx, app) in APPS.iter().enumerate() {
        let mut tasks: Vec<TaskSpec> = Vec::new();
        for variant in 0..4 {
            tasks.push(template_task(app, variant, &mut rng));
        }
        if idx < 60 {
            for variant in 0..4 {
                tasks.push(file_task(app, variant, &mut rng));
            }
        }
        if idx < 70 {
            for variant in 0..3 {
                tasks.push(service_task(app, variant, &mut rng));
            }
        }
        if idx < 30 {
            tasks.push(copy_task(app, &mut rng));
        }
        if (24..48).contains(&idx) {
            tasks.push(debug_task(app, &mut rng));
        }
        if (40..64).contains(&idx) {
            tasks.push(command_task(app, &mut rng));
        }

        let mut content = String::from("---\n");
        for task in &tasks {
            task.emit(&mut content, "");
            content.push('\n');
        }
        total += tasks.len();
        write_file(
            &options.out.join("roles").join(app).join("tasks/main.yml"),
            &content,
        );
    }

    // A couple of playbooks exercising plays, handlers, and blocks.
    let mut site = String::from("---\n- name: Configure edge tier\n  hosts: edge\n  pre_tasks:\n");
    template_task("nginx", 0, &mut rng).emit(&mut site, "    ");
    site.push_str("  tasks:\n");
    file_task("nginx", 0, &mut rng).emit(&mut site, "    ");
    service_task("nginx", 0, &mut rng).emit(&mut site, "    ");
    site.push_str("  handlers:\n");
    service_task("nginx", 2, &mut rng).emit(&mut site, "    ");
    site.push_str("\n- name: Configure cache tier\n  hosts: cache\n  tasks:\n");
    template_task("varnish", 0, &mut rng).emit(&mut site, "    ");
    service_task("varnish", 0, &mut rng).emit(&mut site, "    ");
    site.push_str("  handlers:\n");
    service_task("varnish", 2, &mut rng).emit(&mut site, "    ");
    write_file(&options.out.join("site.yml"), &site);
    total += 7;

    let mut maintenance = String::from(
        "---\n- name: Rolling maintenance\n  hosts: all\n  tasks:\n    - name: Maintenance window tasks\n      block:\n",
    );
    file_task("redis", 3, &mut rng).emit(&mut maintenance, "        ");
    service_task("redis", 1, &mut rng).emit(&mut maintenance, "        ");
    maintenance.push_str("      rescue:\n");
    debug_task("redis", &mut rng).emit(&mut maintenance, "        ");
    write_file(&options.out.join("maintenance.yml"), &maintenance);
    total += 3;

    // Sample repository metadata for the mine subcommand.
    let repos = "\
url,iac_file_ratio,contributor_count,commits_per_month,is_clone
https://example.com/org/edge-infra,0.42,18,6.5,false
https://example.com/org/cache-infra,0.11,10,2,false
https://example.com/org/db-roles,0.35,44,12.25,false
https://example.com/org/low-iac,0.05,30,8,false
https://example.com/org/tiny-team,0.5,4,9,false
https://example.com/org/dormant,0.3,25,0.5,false
https://example.com/org/fork-of-edge,0.42,18,6.5,true
https://example.com/org/monitoring,0.27,15,3.75,false
https://example.com/org/legacy-mirror,0.6,12,2.1,true
https://example.com/org/platform,0.19,52,21,false
";
    write_file(&options.out.join("repos.csv"), repos);

    println!(
        "wrote {total} tasks for {} roles under {}",
        APPS.len(),
        options.out.display()
    );
}
